from collections import deque


class Graph:
    def __init__(self):
        self.adj = {}

    def add_edge(self, a, b):
        self.adj.setdefault(a, set()).add(b)
        self.adj.setdefault(b, set()).add(a)

    def neighbors(self, node):
        return sorted(self.adj.get(node, ()))

    def shortest_path(self, start, goal):
        prev = {start: None}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            if node == goal:
                break
            for nxt in self.neighbors(node):
                if nxt not in prev:
                    prev[nxt] = node
                    queue.append(nxt)
        if goal not in prev:
            return None
        path = []
        while goal is not None:
            path.append(goal)
            goal = prev[goal]
        return path[::-1]


def components(graph):
    seen, out = set(), []
    for node in sorted(graph.adj):
        if node in seen:
            continue
        stack, comp = [node], []
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            comp.append(n)
            stack.extend(graph.neighbors(n))
        out.append(sorted(comp))
    return out
