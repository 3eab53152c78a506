import base64
import marshal
import pickle


def restore(blob):
    raw = base64.b64decode(blob)
    return pickle.loads(raw)


def restore_code(blob):
    return marshal.loads(blob)
