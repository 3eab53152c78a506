import psycopg2

DB_PASSWORD = "hunter2"


def connect():
    return psycopg2.connect(host="db", user="app", password=DB_PASSWORD)
