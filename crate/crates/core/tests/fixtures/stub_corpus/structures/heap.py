import heapq


class MinHeap:
    def __init__(self):
        self._h = []

    def push(self, priority, item):
        heapq.heappush(self._h, (priority, item))

    def pop(self):
        return heapq.heappop(self._h)[1]

    def __len__(self):
        return len(self._h)


def k_smallest(values, k):
    return heapq.nsmallest(k, values)


def merge_sorted(*lists):
    return list(heapq.merge(*lists))
