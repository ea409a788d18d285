def copyleft(x):
    return x
