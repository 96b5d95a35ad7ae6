# tests/flowdcn/model/__init__.py
