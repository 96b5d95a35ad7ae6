# tests/flowdcn/__init__.py
