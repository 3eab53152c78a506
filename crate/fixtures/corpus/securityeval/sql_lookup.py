import sqlite3


def get_user(username):
    conn = sqlite3.connect("users.db")
    cursor = conn.cursor()
    cursor.execute("SELECT * FROM users WHERE username = '%s'" % username)
    return cursor.fetchone()


def delete_user(username):
    conn = sqlite3.connect("users.db")
    cursor = conn.cursor()
    query = "DELETE FROM users WHERE username = '" + username + "'"
    cursor.execute(query)
    conn.commit()
