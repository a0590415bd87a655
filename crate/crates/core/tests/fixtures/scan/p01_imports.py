import numpy as np
from os.path import join
import xml.etree.ElementTree as ET
import sys, json as j
join(a, b)
