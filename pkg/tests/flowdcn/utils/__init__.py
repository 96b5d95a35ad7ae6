# tests/flowdcn/utils/__init__.py
