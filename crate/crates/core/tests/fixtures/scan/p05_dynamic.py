import importlib
mod = importlib.import_module("fakedynamic")
other = __import__("fakedunder")
import requests
requests.get(url)
