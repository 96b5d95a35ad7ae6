# flowdcn/model/__init__.py
