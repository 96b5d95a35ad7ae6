# tests/flowdcn/ops/__init__.py
