# flowdcn/__init__.py
