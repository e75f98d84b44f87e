"""Count-based Kneser-Ney bigram values with exact rational arithmetic."""

from fractions import Fraction
from math import log

corpus = "a b a b a c".split()
d = Fraction(3, 4)
pairs = list(zip(corpus[:-1], corpus[1:]))
vocab = sorted(set(corpus))

count = {}
for p in pairs:
    count[p] = count.get(p, 0) + 1
types = set(pairs)


def c_ctx(v):
    return sum(n for (x, _), n in count.items() if x == v)


def p_cont(w):
    return Fraction(sum(1 for (_, y) in types if y == w), len(types))


def p(v, w):
    total = c_ctx(v)
    if total == 0:
        return p_cont(w)
    lam = d * sum(1 for (x, _) in types if x == v) / total
    return Fraction(max(Fraction(count.get((v, w), 0)) - d, 0)) / total + lam * p_cont(w)


for v in vocab:
    for w in vocab:
        print(f"P({w}|{v}) = {p(v, w)} = {float(p(v, w))!r}")
    print(f"sum_w P(w|{v}) = {sum(p(v, w) for w in vocab)}")
print("log P('a b') =", repr(log(p_cont('a') * p('a', 'b'))), "=", f"log({p_cont('a') * p('a', 'b')})")
