import subprocess


def add_to_menu(param):
    command = 'echo' + param + ' >> ' + 'menu.txt'
    subprocess.call(command, shell=True)


def clear_menu():
    subprocess.call('echo Menu: > menu.txt', shell=True)
