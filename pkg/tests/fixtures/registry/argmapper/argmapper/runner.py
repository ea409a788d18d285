from .arguments import ArgumentSpec


class Runner:
    def __init__(self):
        self.arguments = ArgumentSpec()
        self.supports_kwargs = False

    def resolve_arguments(self, arguments, variables=None):
        positional, named = arguments
        if not self.supports_kwargs:
            positional, named = self.arguments.map(positional, named)
        return positional, named
