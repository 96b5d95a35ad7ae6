# flowdcn/flow/__init__.py
