# flowdcn/data/__init__.py
