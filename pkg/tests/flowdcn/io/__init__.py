# tests/flowdcn/io/__init__.py
