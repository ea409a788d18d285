import strutils


def greet(name, times):
    message = strutils.shout(name, times=times)
    return message
