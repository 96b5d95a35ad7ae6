# flowdcn/bench/__init__.py
