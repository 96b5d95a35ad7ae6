# tests/flowdcn/tensor/__init__.py
