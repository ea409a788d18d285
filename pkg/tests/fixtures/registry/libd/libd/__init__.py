from liba import helpers


def boost(value):
    result = helpers.apply_twice(value, 3)
    return result
