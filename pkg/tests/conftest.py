import os
import sys

# make the shared test oracles importable from every test module
sys.path.insert(0, os.path.dirname(__file__))
