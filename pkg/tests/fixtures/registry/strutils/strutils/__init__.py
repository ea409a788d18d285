def repeat_join(parts, sep):
    joined = sep.join(parts)
    return joined


def shout(word, times=1):
    suffix = chr(33)
    return (word + suffix) * times
