# analyzers/__init__.py
