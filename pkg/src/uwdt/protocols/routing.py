from __future__ import annotations

from dataclasses import dataclass, field


class NoRoute(LookupError):
    pass


class RoutingLoop(ValueError):
    pass


@dataclass
class RoutingTable:
    next_hop: dict[tuple[int, int], int] = field(default_factory=dict)

    @classmethod
    def chain(cls, nodes: list[int]) -> "RoutingTable":
        """Static route along ``nodes`` toward the last one."""
        table = cls()
        sink = nodes[-1]
        for a, b in zip(nodes, nodes[1:]):
            table.next_hop[(a, sink)] = b
        return table

    @classmethod
    def tree(cls, parent: dict[int, int], root: int) -> "RoutingTable":
        table = cls()
        for node, p in parent.items():
            if node != root:
                table.next_hop[(node, root)] = p
        table.validate()
        return table

    def set(self, node: int, dst: int, hop: int) -> None:
        self.next_hop[(node, dst)] = hop

    def validate(self) -> None:
        nodes = {n for n, _ in self.next_hop} | set(self.next_hop.values())
        for (node, dst) in list(self.next_hop):
            path(self, node, dst, limit=len(nodes) + 1)


def next_hop(table: RoutingTable, node: int, dst: int) -> int:
    if node == dst:
        return dst
    try:
        return table.next_hop[(node, dst)]
    except KeyError:
        raise NoRoute(f"no route from {node} to {dst}") from None


def path(table: RoutingTable, src: int, dst: int, limit: int | None = None) -> list[int]:
    limit = limit if limit is not None else len(table.next_hop) + 1
    hops = [src]
    cur = src
    while cur != dst:
        cur = next_hop(table, cur, dst)
        if cur in hops:
            raise RoutingLoop(f"routing loop {hops + [cur]}")
        hops.append(cur)
        if len(hops) > limit + 1:
            raise RoutingLoop(f"path from {src} to {dst} exceeds {limit} hops")
    return hops
