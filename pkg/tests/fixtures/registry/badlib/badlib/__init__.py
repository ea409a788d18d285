import gpltool


def wrap(x):
    value = gpltool.copyleft(x)
    return value
