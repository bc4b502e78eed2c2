class EmptyStack(Exception):
    pass


class Stack:
    def __init__(self, items=None):
        self._items = list(items or [])

    def push(self, item):
        self._items.append(item)

    def pop(self):
        if not self._items:
            raise EmptyStack("pop from empty stack")
        return self._items.pop()

    def peek(self):
        if not self._items:
            raise EmptyStack("peek at empty stack")
        return self._items[-1]

    def __len__(self):
        return len(self._items)

    def __bool__(self):
        return bool(self._items)
