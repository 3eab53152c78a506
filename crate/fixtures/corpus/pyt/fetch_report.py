import requests


def fetch(url):
    response = requests.get(url, verify=False, timeout=10)
    return response.text
