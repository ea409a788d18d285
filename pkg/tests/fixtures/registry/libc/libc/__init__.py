def mix(a, b):
    return a ^ b


def mix_all(items, salt):
    total = 0
    for item in items:
        total = mix(total, item)
    return mix(total, salt)
