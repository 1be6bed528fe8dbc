# planner/__init__.py
