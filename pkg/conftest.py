"""Root level conftest to make both `src.hjb_maxplus` and `hjb_maxplus` importable."""
import os
import sys

ROOT = os.path.abspath(os.path.dirname(__file__))

sys.path.insert(0, ROOT)
sys.path.insert(1, os.path.join(ROOT, "src"))
