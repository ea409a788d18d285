import math
import os
from time import sleep

SHARED_ROOT = os.getcwd()


def assert_positive(x):
    if x <= 0:
        raise ValueError(str(x))
    return x


def compute():
    return math.floor(3.7)


def build_path(a, b):
    joined = os.path.join(a, b)
    return joined


def run_all(a, b):
    assert_positive(a)
    value = math.pow(a, b)
    flag = compute()
    print("done")
    n = int(a)
    p = os.path.join(a, "b")
    sleep(1)
    return value, flag, n, p
