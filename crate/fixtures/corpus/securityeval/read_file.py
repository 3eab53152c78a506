import os

from flask import Flask, request

app = Flask(__name__)


@app.route("/read")
def read():
    name = request.args.get("filename")
    with open(os.path.join("/var/data", name)) as fh:
        return fh.read()
