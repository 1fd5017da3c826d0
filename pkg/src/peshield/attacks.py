"""Black-box attack drivers: random search, genetic search, trace minimization.

A detector is anything with a ``score(data: bytes) -> float`` method (score in
[0, 1]) and a ``threshold`` attribute; a sample evades when its score falls
below the threshold. Drivers never mutate their inputs, count every detector
invocation, and are deterministic under their seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Protocol

from . import pe, perturb
from .errors import EmptyPool, TraceNotEvasive


class Detector(Protocol):
    threshold: float

    def score(self, data: bytes) -> float: ...


@dataclass
class CallableDetector:
    """Adapter for plain score functions, mostly used by tests and toys."""

    fn: Callable[[bytes], float]
    threshold: float = 0.5

    def score(self, data: bytes) -> float:
        return self.fn(data)


@dataclass(frozen=True)
class AttackCaps:
    """Per-attack budget: steps per trajectory and total detector queries.

    The query cap follows the section-injection attack configuration (100
    queries); the step cap is a desk-scale choice.
    """

    max_steps: int = 40
    query_cap: int = 100


@dataclass(frozen=True)
class AttackResult:
    evaded: bool
    trace: perturb.PerturbationTrace
    final: pe.PeLayout


@dataclass(frozen=True)
class GeneticAttackParams:
    """Genetic search configuration. Defaults mirror the section-injection
    attack: 10 sections per candidate, 100 queries, size penalty 1e-6."""

    population_size: int = 10
    query_cap: int = 100
    size_penalty_lambda: float = 1e-6
    sections_per_candidate: int = 10
    goodware_pool: tuple[bytes, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.query_cap < self.population_size:
            raise ValueError("query_cap must be at least population_size")
        if self.size_penalty_lambda < 0:
            raise ValueError("size_penalty_lambda must be non-negative")


def harvest_section_pool(images: list[bytes], max_payloads: int = 64) -> tuple[bytes, ...]:
    """Collect nonempty section payloads from goodware images, for use as
    injection/padding content."""
    pool: list[bytes] = []
    for data in images:
        try:
            layout = pe.parse_bytes(data, tolerant=True)
        except Exception:
            continue
        for payload in layout.section_payloads:
            if payload:
                pool.append(payload)
            if len(pool) >= max_payloads:
                return tuple(pool)
    return tuple(pool)


def _pool_bytes(rng: random.Random, pool: tuple[bytes, ...], n: int) -> bytes:
    """n bytes drawn from the pool (tiled slices), or uniform random bytes."""
    if not pool:
        return rng.randbytes(n)
    out = bytearray()
    while len(out) < n:
        src = pool[rng.randrange(len(pool))]
        start = rng.randrange(len(src))
        out += src[start : start + (n - len(out))]
    return bytes(out)


def random_step(
    layout: pe.PeLayout,
    rng: random.Random,
    pool: tuple[bytes, ...] = (),
) -> perturb.Perturbation:
    """Draw one applicable perturbation for this layout. Payload bytes come
    from the goodware pool when one is supplied (half the time), else they
    are uniform random."""
    falign = layout.optional.file_alignment or 512
    slack = pe.slack_regions(layout)

    def payload(n: int) -> bytes:
        if pool and rng.random() < 0.5:
            return _pool_bytes(rng, pool, n)
        return rng.randbytes(n)

    kinds = ["partial_dos", "full_dos", "extend_dos", "pad_overlay", "inject_section"]
    if slack:
        kinds.append("fill_slack")
    kind = rng.choice(kinds)
    if kind == "partial_dos":
        return perturb.PartialDos(payload(perturb.PARTIAL_DOS_LIMIT))
    if kind == "full_dos":
        return perturb.FullDos(
            header_payload=payload(perturb.PARTIAL_DOS_LIMIT),
            stub_payload=payload(len(layout.dos.stub)),
        )
    if kind == "extend_dos":
        return perturb.ExtendDos(amount=falign, payload=payload(falign))
    if kind == "pad_overlay":
        return perturb.PadOverlay(payload(2048))
    if kind == "fill_slack":
        chosen = [r for r in slack if rng.random() < 0.75] or [slack[0]]
        return perturb.FillSlack(
            assignments=tuple((off, payload(length)) for off, length in chosen)
        )
    name = bytes(rng.randrange(0x61, 0x7B) for _ in range(rng.randint(3, 7)))
    content = payload(rng.choice([512, 1024, 2048, 4096]))
    return perturb.InjectSection(name=b"." + name, content=content)


def random_attack(
    layout: pe.PeLayout,
    detector: Detector,
    caps: AttackCaps = AttackCaps(),
    rng: random.Random | None = None,
    pool: tuple[bytes, ...] = (),
) -> AttackResult:
    """Random search: apply random perturbations, querying after each; the
    trajectory restarts from the original sample whenever max_steps is
    reached, until the sample evades or the query budget is spent. Steps that
    no longer fit the layout are skipped, never fatal. When no trajectory
    evades, the best-scoring one seen is returned."""
    rng = rng or random.Random(0)
    queries = 0

    base_score = detector.score(pe.serialize_pe(layout))
    queries += 1
    if base_score < detector.threshold:
        return AttackResult(True, perturb.make_trace(layout, (), queries), layout)

    best_score = base_score
    best_steps: tuple[perturb.Perturbation, ...] = ()
    best_layout = layout
    while queries < caps.query_cap:
        current = layout
        steps: list[perturb.Perturbation] = []
        while len(steps) < caps.max_steps and queries < caps.query_cap:
            step = random_step(current, rng, pool)
            try:
                candidate = perturb.apply(current, step)
            except (perturb.NoSlackAvailable, perturb.SectionTableFull, perturb.PayloadTooLarge):
                continue
            current = candidate
            steps.append(step)
            score = detector.score(pe.serialize_pe(current))
            queries += 1
            if score < best_score:
                best_score, best_steps, best_layout = score, tuple(steps), current
            if score < detector.threshold:
                return AttackResult(
                    True, perturb.make_trace(layout, tuple(steps), queries), current
                )
    return AttackResult(False, perturb.make_trace(layout, best_steps, queries), best_layout)


@dataclass
class _Candidate:
    genes: tuple[tuple[int, float], ...]  # (pool index, payload fraction) per section
    fitness: float = 0.0
    score: float = 0.0
    steps: tuple[perturb.Perturbation, ...] = ()
    layout: pe.PeLayout | None = None


def _candidate_steps(
    genes: tuple[tuple[int, float], ...], pool: tuple[bytes, ...]
) -> tuple[perturb.Perturbation, ...]:
    steps = []
    for pool_idx, fraction in genes:
        src = pool[pool_idx]
        length = max(1, round(fraction * len(src)))
        steps.append(
            perturb.InjectSection(name=b".gen%03d" % (pool_idx % 1000), content=src[:length])
        )
    return tuple(steps)


def genetic_attack(
    layout: pe.PeLayout,
    detector: Detector,
    params: GeneticAttackParams,
) -> AttackResult:
    """Genetic search over goodware-section injections. Candidate fitness is
    detector score plus ``size_penalty_lambda`` times injected bytes
    (minimized); the detector is invoked at most ``query_cap`` times."""
    if not params.goodware_pool:
        raise EmptyPool("genetic attack requires a goodware section pool")
    pool = params.goodware_pool
    rng = random.Random(params.seed)
    base_length = layout.file_length()
    queries = 0

    def evaluate(cand: _Candidate) -> None:
        nonlocal queries
        cand.steps = _candidate_steps(cand.genes, pool)
        cand.layout = perturb.replay(layout, cand.steps)
        cand.score = detector.score(pe.serialize_pe(cand.layout))
        queries += 1
        injected = cand.layout.file_length() - base_length
        cand.fitness = cand.score + params.size_penalty_lambda * injected

    def random_genes() -> tuple[tuple[int, float], ...]:
        return tuple(
            (rng.randrange(len(pool)), rng.random())
            for _ in range(params.sections_per_candidate)
        )

    population = [_Candidate(random_genes()) for _ in range(params.population_size)]
    best: _Candidate | None = None
    generations = params.query_cap // params.population_size
    for _ in range(generations):
        for cand in population:
            evaluate(cand)
            if best is None or cand.fitness < best.fitness:
                best = cand
        ranked = sorted(population, key=lambda c: c.fitness)
        parents = ranked[: max(2, len(ranked) // 2)]
        children = [_Candidate(parents[0].genes)]  # elitism
        while len(children) < params.population_size:
            mother, father = rng.sample(parents, 2)
            genes = tuple(
                (m if rng.random() < 0.5 else f) for m, f in zip(mother.genes, father.genes)
            )
            mutated = tuple(
                (rng.randrange(len(pool)), rng.random())
                if rng.random() < 0.2
                else (idx, min(1.0, max(0.0, frac + rng.gauss(0.0, 0.1))))
                for idx, frac in genes
            )
            children.append(_Candidate(mutated))
        population = children

    assert best is not None and best.layout is not None
    trace = perturb.make_trace(layout, best.steps, queries)
    return AttackResult(best.score < detector.threshold, trace, best.layout)


def minimize_trace(
    layout: pe.PeLayout,
    detector: Detector,
    trace: perturb.PerturbationTrace,
) -> perturb.PerturbationTrace:
    """Greedy single-pass trace minimization: drop each step whose removal
    keeps the replayed trace evasive. The result is an evasive subsequence of
    the input, never longer."""

    def evades(steps: tuple[perturb.Perturbation, ...]) -> bool:
        replayed = perturb.replay(layout, steps)
        return detector.score(pe.serialize_pe(replayed)) < detector.threshold

    queries = 1
    if not evades(trace.steps):
        raise TraceNotEvasive("the given trace does not evade the detector")

    kept = list(trace.steps)
    i = 0
    while i < len(kept):
        candidate = tuple(kept[:i] + kept[i + 1 :])
        queries += 1
        if evades(candidate):
            del kept[i]
        else:
            i += 1
    return perturb.make_trace(layout, tuple(kept), queries)
