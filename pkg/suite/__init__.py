# suite/__init__.py
