# Empty: marks nodes/ as a Python package
