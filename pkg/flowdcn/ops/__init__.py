# flowdcn/ops/__init__.py
