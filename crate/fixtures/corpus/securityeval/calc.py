def calculate(expression):
    result = eval(expression)
    return result


if __name__ == "__main__":
    print(calculate(input("expr> ")))
