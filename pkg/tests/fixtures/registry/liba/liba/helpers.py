def scale(value, factor):
    return value * factor


def apply_twice(value, factor):
    first = scale(value, factor)
    second = scale(first, factor)
    return second


def apply_default(value):
    result = scale(value, 2)
    return result
