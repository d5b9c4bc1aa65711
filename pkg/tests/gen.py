"""Random session types for the test suites."""

import random

from sesst.core_types import (
    BOOL, END, INT, NAT, Branch, End, Mu, Select, Shared, Var, check_well_formed, free_vars,
)

LABELS = ("l1", "l2", "l3", "l4")


def rand_type(rng: random.Random, depth: int = 4, labels: int = 3, ext: bool = False,
              rec: tuple = (), guarded: bool = False, pay_depth: int = 1):
    """A closed contractive type; ``rec`` holds the bound variables usable here."""
    roll = rng.random()
    if depth <= 0 or roll < 0.12:
        if rec and guarded and rng.random() < 0.6:
            return Var(rng.choice(rec))
        return END
    if roll < 0.28 and len(rec) < 2:
        name = "t" if "t" not in rec else "u"
        return Mu(name, rand_type(rng, depth, labels, ext, rec + (name,), False, pay_depth))
    if rec and guarded and roll < 0.36:
        return Var(rng.choice(rec))
    k = rng.randint(1, labels)
    ls = sorted(rng.sample(LABELS[:max(labels, 1) + 1], k))
    entries = []
    for l in ls:
        pay = rand_payload(rng, pay_depth, labels, ext)
        entries.append((l, pay, rand_type(rng, depth - 1, labels, ext, rec, True, pay_depth)))
    return (Branch if rng.random() < 0.5 else Select)(tuple(entries))


def rand_payload(rng, pay_depth, labels, ext):
    if ext:
        r = rng.random()
        if r < 0.5:
            return rng.choice((BOOL, NAT, INT))
        if r < 0.65 and pay_depth > 0:
            return Shared(rand_type(rng, 1, 2, False, pay_depth=0))
    if pay_depth > 0 and rng.random() < 0.35:
        return rand_type(rng, 2, 2, ext, pay_depth=pay_depth - 1)
    return END


def check(t):
    check_well_formed(t)
    assert not free_vars(t)
    return t


def corpus(seed: int, n: int, **kw):
    rng = random.Random(seed)
    return [check(rand_type(rng, **kw)) for _ in range(n)]


def widen(rng, t, up: bool = True, p: float = 0.3):
    """A random supertype of ``t`` (a subtype when ``up`` is false)."""
    match t:
        case Mu(name, body):
            return Mu(name, widen(rng, body, up, p))
        case Branch(entries) | Select(entries):
            grow = isinstance(t, Select) == up
            entries = list(entries)
            out = []
            for l, u, c in entries:
                if not grow and len(entries) > 1 and rng.random() < p and len(out) + 1 < len(entries):
                    continue
                # a branch payload moves with the type, a selection payload against it
                pay_up = up if isinstance(t, Branch) else not up
                out.append((l, widen_payload(rng, u, pay_up, p), widen(rng, c, up, p)))
            if not out:
                out.append(entries[0])
            if grow and rng.random() < p:
                free = [l for l in LABELS if l not in {e[0] for e in out}]
                if free:
                    out.append((rng.choice(free), END, END))
            out.sort(key=lambda e: e[0])
            return type(t)(tuple(out))
    return t


def widen_payload(rng, u, up, p):
    if u in (NAT, INT):
        if rng.random() < p:
            # the sort order is the reverse of the session order here
            return NAT if up else INT
        return u
    if isinstance(u, (Mu, Branch, Select)):
        return widen(rng, u, up, p)
    return u


def mutate(rng, t):
    """A near miss: change one random node of ``t``."""
    match t:
        case Mu(name, body):
            return Mu(name, mutate(rng, body))
        case Branch(entries) | Select(entries):
            i = rng.randrange(len(entries))
            l, u, c = entries[i]
            r = rng.random()
            if r < 0.25:
                new = (l, u, END if c != END else Branch((("l1", END, END),)))
            elif r < 0.45:
                flip = Select if isinstance(t, Branch) else Branch
                return flip(entries)
            elif r < 0.6:
                free = [x for x in LABELS if x not in {e[0] for e in entries}]
                new = (free[0] if free else l, u, c)
            elif r < 0.75 and u == END:
                new = (l, Select((("l1", END, END),)), c)
            else:
                new = (l, u, mutate(rng, c))
            out = list(entries)
            out[i] = new
            out.sort(key=lambda e: e[0])
            if len({e[0] for e in out}) != len(out):
                return t
            return type(t)(tuple(out))
        case End():
            return Select((("l1", END, END),))
    return t


def pairs(seed: int, n: int, **kw):
    """Mixed pairs: supertypes, subtypes, near misses and independent draws."""
    rng = random.Random(seed)
    out = []
    while len(out) < n:
        t = rand_type(rng, **kw)
        r = rng.random()
        if r < 0.3:
            s = widen(rng, t)
        elif r < 0.45:
            s = widen(rng, t, up=False)
        elif r < 0.8:
            s = mutate(rng, widen(rng, t))
        else:
            s = rand_type(rng, **kw)
        check(s)
        out.append((t, s))
    return out
