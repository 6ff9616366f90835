"""Minimal layer container: parameter registration and train/eval mode."""


class Module:
    def __init__(self):
        self._params = []
        self._children = []
        self.training = True

    def register(self, tensor):
        self._params.append(tensor)
        return tensor

    def add_child(self, child):
        self._children.append(child)
        return child

    def parameters(self):
        seen = set()
        out = []
        for p in self._params:
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        for c in self._children:
            for p in c.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def walk(self):
        yield self
        for c in self._children:
            yield from c.walk()

    def train(self, mode=True):
        self.training = mode
        for c in self._children:
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()
