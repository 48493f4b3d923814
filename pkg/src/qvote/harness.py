"""Experiment runner: configs, Monte Carlo runs, reports and invariant checks.

Configs are YAML documents; every field has a default, so an empty file is a
valid config (four honest agents, ideal source, 10^4 states)::

    mode: protocol          # protocol | coincidence | attack
    n_agents: 4
    intents: EFEF           # one letter per agent
    source: {kind: werner, fidelity: 0.89}
    m: 7
    tau: 0.05
    rounds: 10000
    scenario: null          # attack mode: a name from qvote.adversary.SCENARIOS
    trials: 10000           # anonymity-audit trials
    master_seed: 2024
    workers: 1
    stream: {dark_hz: 0.0, window_ps: 1000, jitter_ps: 50, fourfold_hz: 0.3, pulse_hz: 7.6e7}
    output_dir: null

With ``output_dir`` set, ``transcript.jsonl`` (one event per line) and
``summary.json`` are written there.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import adversary as adv
from .coincidence import (
    ChannelMap,
    StreamConfig,
    fourfolds_to_rounds,
    generate_stream,
    process_stream,
    iter_chunks,
    rounds_to_channels,
)
from .ghz import (
    AdaptiveMalicious,
    Ideal,
    WernerEnsemble,
    ensemble_fidelity,
    make_phi0,
    strategy_from_dict,
    verification_pass_probability,
)
from .protocol import (
    ElectionOutcome,
    MeasuredRound,
    RoundKind,
    RoundRecord,
    SecurityParams,
    assign_voter_indices,
    classical_baseline_election,
    classify_events,
    decide,
    make_profiles,
    measure_rounds,
    run_election,
)
from .qsim import ContractViolation
from .seeding import derive_seed
from .stats import Reference, StatReport, binomial_z, wilson_interval

log = logging.getLogger(__name__)

# published experimental values used as context only
PUBLISHED_PASS_RATE = Reference(0.87, "published", 0.03, "observed verification pass rate (4 parties, ~5 h run)")
PUBLISHED_FIDELITY = Reference(0.89, "published", None, "tomographic fidelity of the 4-photon state")
PUBLISHED_FIDELITY_FAILURE = Reference(
    0.055, "published", None, "upper bound on the failure rate attributable to state fidelity"
)


@dataclass
class ExperimentConfig:
    mode: str = "protocol"
    n_agents: int = 4
    intents: str = "EEEE"
    source: dict = field(default_factory=lambda: {"kind": "ideal"})
    m: int = 7
    tau: float = 0.05
    rounds: int = 10_000
    scenario: str | None = None
    trials: int = 10_000
    master_seed: int = 2024
    workers: int = 1
    stream: dict = field(default_factory=dict)
    output_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("protocol", "coincidence", "attack"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.intents) != self.n_agents:
            raise ValueError(f"need {self.n_agents} intents, got {self.intents!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "intents" in d and not isinstance(d["intents"], str):
            d["intents"] = "".join(d["intents"])
        n = d.get("n_agents", 4)
        d.setdefault("intents", "E" * n)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def params(self) -> SecurityParams:
        return SecurityParams(self.m, self.tau, self.rounds)

    def strategy(self):
        src = dict(self.source)
        src.setdefault("n", self.n_agents)
        return strategy_from_dict(src)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outcome: ElectionOutcome | None
    records: list[RoundRecord]
    reports: list[StatReport] = field(default_factory=list)
    invariants: dict[str, bool] = field(default_factory=dict)
    audit: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.invariants.values())

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "outcome": self.outcome.summary() if self.outcome else None,
            "reports": [r.to_dict() for r in self.reports],
            "invariants": dict(sorted(self.invariants.items())),
            "invariants_ok": self.ok,
            "audit": self.audit,
            "extra": self.extra,
        }

    def transcript_lines(self) -> list[str]:
        return [r.to_json() for r in self.records]

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tpath, spath = out / "transcript.jsonl", out / "summary.json"
        with open(tpath, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.transcript_lines():
                fh.write(line + "\n")
        with open(spath, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return tpath, spath


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# reports


def verification_rate_report(
    records: list[RoundRecord],
    predicted: float | None = None,
    references: tuple[Reference, ...] = (PUBLISHED_PASS_RATE,),
) -> StatReport:
    """Wilson interval for the announced pass rate over verifying events.

    ``predicted`` (an exact model value) adds a 3-sigma agreement check.
    """
    verifying = [r for r in records if r.kind is RoundKind.Verifying]
    refs = list(references)
    if not verifying:
        return StatReport("verification_pass_rate", None, references=refs, status="insufficient_data",
                          notes=["no verifying events in transcript"])
    n = len(verifying)
    passed = sum(bool(r.announced) for r in verifying)
    rate = passed / n
    lo, hi = wilson_interval(passed, n)
    rep = StatReport("verification_pass_rate", rate, math.sqrt(rate * (1 - rate) / n), interval=(lo, hi),
                     references=refs)
    for ref in refs:
        if ref.provenance == "published":
            inside = lo <= ref.value <= hi
            rep.notes.append(
                f"published rate {ref.value} {'inside' if inside else 'outside'} the 95% interval "
                f"[{lo:.4f}, {hi:.4f}]"
                + ("" if inside else "; the simulated source has no implementation losses (phase drift, "
                   "sub-state misalignment), which the published figure includes")
            )
    if predicted is not None:
        rep.references.append(Reference(predicted, "derived", note="exact enumeration over ensemble branches"))
        z = binomial_z(passed, n, predicted)
        rep.statistic = z
        rep.status = "ok" if abs(z) <= 3 else "mismatch"
        rep.notes.append(f"{z:+.2f} sigma from the exact prediction {predicted:.6f}")
    return rep


def failure_attribution_report(records: list[RoundRecord], strategy, limit: int | None = None) -> StatReport:
    """Monte Carlo verification failure rate against the exact fidelity-only prediction.

    Puts the model's fidelity-driven failure next to the published total
    failure (1 - 0.87) and the published fidelity attribution; the remainder is
    labelled implementation losses, which are not modelled.
    """
    verifying = [r for r in records if r.kind is RoundKind.Verifying]
    if limit is not None:
        verifying = verifying[:limit]
    exact_fail = 1.0 - verification_pass_probability(strategy)
    if not verifying:
        return StatReport("verification_failure_rate", None, status="insufficient_data")
    n = len(verifying)
    fails = sum(not r.passed for r in verifying)
    rate = fails / n
    sigma = math.sqrt(exact_fail * (1 - exact_fail) / n)
    total_fail = 1.0 - PUBLISHED_PASS_RATE.value
    rep = StatReport(
        "verification_failure_rate",
        rate,
        math.sqrt(max(rate * (1 - rate), 1e-300) / n),
        statistic=(rate - exact_fail) / sigma if sigma > 0 else 0.0,
        interval=wilson_interval(fails, n),
        references=[
            Reference(exact_fail, "derived", note="fidelity-only failure, exact enumeration"),
            Reference(round(total_fail, 6), "published", PUBLISHED_PASS_RATE.uncertainty,
                      note="total observed failure rate"),
            PUBLISHED_FIDELITY_FAILURE,
        ],
    )
    rep.status = "ok" if abs(rate - exact_fail) <= 3 * sigma + 1e-12 else "mismatch"
    rep.notes.append(f"{n} verifying events, {fails} failures; model predicts {exact_fail:.4f} +- {sigma:.4f}")
    rep.notes.append(
        f"fidelity-only component {exact_fail:.4f} of the published total {total_fail:.2f}; "
        f"the remaining {max(0.0, total_fail - exact_fail):.4f} is implementation losses, outside this model"
    )
    return rep


def fidelity_report(strategy) -> StatReport:
    f, se = ensemble_fidelity(strategy, make_phi0(strategy.n))
    return StatReport("ensemble_fidelity", f, se, references=[PUBLISHED_FIDELITY],
                      notes=["computed from the source ensemble, not reconstructed from tomography"])


def classification_report(records: list[RoundRecord], m: int) -> tuple[StatReport, bool]:
    n = len(records)
    expected = {
        RoundKind.Discarded: 0.5,
        RoundKind.Voting: 0.5 * 2.0**-m,
        RoundKind.Verifying: 0.5 * (1 - 2.0**-m),
    }
    zs = {k.value: binomial_z(sum(r.kind is k for r in records), n, p) for k, p in expected.items()}
    ok = all(abs(z) <= 3 for z in zs.values())
    rep = StatReport("classification_fractions", None, statistic=max(abs(z) for z in zs.values()),
                     references=[Reference(p, "derived", note=f"{k.value} fraction") for k, p in expected.items()],
                     status="ok" if ok else "mismatch", notes=[f"z-scores {zs}"])
    return rep, ok


def parity_bookkeeping(records: list[RoundRecord]) -> bool:
    return all(
        sum(r.outcomes) % 2 == (r.hadamard_count // 2) % 2 for r in records if r.kind is not RoundKind.Discarded
    )


# ---------------------------------------------------------------------------
# runner


def _profiles(config: ExperimentConfig, dishonest=()):
    return make_profiles(list(config.intents), dishonest)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    if config.mode == "attack":
        result = _run_attack(config)
    elif config.mode == "coincidence":
        result = _run_coincidence(config)
    else:
        result = _run_protocol(config)
    if config.output_dir:
        result.write(config.output_dir)
    return result


def _standard_checks(result: ExperimentResult, strategy, profiles) -> None:
    cfg = result.config
    records, outcome = result.records, result.outcome
    params = cfg.params
    honest = all(p.honest for p in profiles)
    predicted = None
    try:
        predicted = verification_pass_probability(strategy)
    except ContractViolation:  # continuous ensembles have no finite enumeration
        pass
    result.reports.append(verification_rate_report(records, predicted))
    if not isinstance(strategy, AdaptiveMalicious):
        result.reports.append(fidelity_report(strategy))
    if isinstance(strategy, WernerEnsemble):
        result.reports.append(failure_attribution_report(records, strategy))
    rep, ok = classification_report(records, params.m)
    result.reports.append(rep)
    if honest:
        result.invariants["classification_fractions"] = ok
    if outcome.counts.get("verifying"):
        result.invariants["abort_monotonicity"] = (outcome.pass_rate < 1 - params.tau) <= outcome.aborted
    if isinstance(strategy, Ideal) and honest:
        result.invariants["ideal_completeness"] = outcome.pass_rate == 1.0
        result.invariants["parity_bookkeeping"] = parity_bookkeeping(records)
        if outcome.status == "ok":
            seeded = assign_voter_indices(profiles, derive_seed(cfg.master_seed, "unique-index"))
            base = classical_baseline_election(seeded, cfg.master_seed)
            result.invariants["oracle_equivalence"] = base.recorded == outcome.recorded
            result.invariants["intents_recorded"] = all(outcome.success_flags.values())
    if predicted is not None and honest:
        result.invariants["pass_rate_matches_oracle"] = result.reports[0].status == "ok"


def _run_protocol(config: ExperimentConfig) -> ExperimentResult:
    strategy = config.strategy()
    profiles = _profiles(config)
    outcome, records = run_election(profiles, strategy, config.params, config.master_seed, workers=config.workers)
    result = ExperimentResult(config, outcome, records)
    _standard_checks(result, strategy, profiles)
    return result


def stream_config(config: ExperimentConfig) -> StreamConfig:
    s = config.stream
    return StreamConfig(
        pulse_rate_hz=float(s.get("pulse_hz", 76e6)),
        fourfold_rate_hz=float(s.get("fourfold_hz", 0.3)),
        dark_rate_hz=float(s.get("dark_hz", 0.0)),
        jitter_ps=float(s.get("jitter_ps", 50.0)),
        window_ps=int(s.get("window_ps", 1000)),
        duration_s=0.0,
    )


def _run_coincidence(config: ExperimentConfig) -> ExperimentResult:
    """Protocol where events come out of the tag-stream pipeline instead of directly."""
    strategy = config.strategy()
    profiles = assign_voter_indices(_profiles(config), derive_seed(config.master_seed, "unique-index"))
    cmap = ChannelMap.agent_major(config.n_agents)
    measured = measure_rounds(strategy, config.rounds, config.master_seed, workers=config.workers)
    planted = rounds_to_channels(((m.bases, m.outcomes) for m in measured), cmap)
    scfg = stream_config(config)
    stream = generate_stream(scfg, planted, derive_seed(config.master_seed, "stream"), cmap)
    fourfolds, pipe = process_stream(iter_chunks(stream.events, 1 << 18), scfg.window_ps, cmap)
    events = [MeasuredRound(p, b, y) for p, (b, y) in enumerate(fourfolds_to_rounds(fourfolds, cmap))]
    records = classify_events(events, config.n_agents, config.params, config.master_seed)
    outcome = decide(records, profiles, config.params)
    result = ExperimentResult(config, outcome, records)
    truth_keys = {tuple(r) for r in stream.truth["t"].tolist()}
    found_keys = {tuple(r) for r in fourfolds["t"].tolist()}
    recall = len(truth_keys & found_keys) / len(truth_keys) if truth_keys else 1.0
    result.extra["stream"] = {
        "events": int(stream.events.size),
        "planted": int(stream.truth.size),
        "found": int(fourfolds.size),
        "recall": recall,
        "vetoed": pipe.vetoed,
        "peak_buffer": pipe.peak_buffer,
        "duration_s": stream.duration_ps / 1e12,
    }
    _standard_checks(result, strategy, profiles)
    if scfg.dark_rate_hz == 0:
        pure_outcome, _ = run_election(profiles, strategy, config.params, config.master_seed, workers=config.workers)
        result.invariants["pipeline_consistency"] = pure_outcome.summary() == outcome.summary()
        result.invariants["planted_recall"] = recall == 1.0
    return result


def _run_attack(config: ExperimentConfig) -> ExperimentResult:
    sc = adv.scenario_by_name(config.scenario or "family-phi0", n=config.n_agents)
    dishonest = [a for a in range(1, sc.n + 1) if a not in sc.honest]
    profiles = _profiles(config, dishonest)
    outcome, records = run_election(profiles, sc.source, config.params, config.master_seed, sc.policy,
                                    workers=config.workers)
    result = ExperimentResult(config, outcome, records)
    exact = adv.scenario_pass_probability(sc)
    rep = verification_rate_report(records, exact)
    result.reports.append(rep)
    result.extra["scenario"] = {
        "name": sc.name,
        "honest": list(sc.honest),
        "exact_pass_probability": exact,
        "expected_pass": sc.expected_pass,
        "expected_provenance": sc.provenance,
        "expected_leak": sc.expected_leak,
    }
    result.invariants["exact_pass_matches_expectation"] = abs(exact - sc.expected_pass) < 1e-9
    result.invariants["pass_rate_matches_oracle"] = rep.status in ("ok", "insufficient_data")
    result.invariants["discard_parity"] = adv.discard_parity_holds(records, sc.honest)
    try:
        audit = adv.anonymity_audit(sc, config.trials, config.master_seed, require_verification=not sc.expected_leak)
        result.audit = audit.to_dict()
        result.invariants["anonymity_as_expected"] = audit.leak == sc.expected_leak
    except adv.AuditRefused as exc:
        result.audit = {"scenario": sc.name, "refused": str(exc)}
    return result


# ---------------------------------------------------------------------------
# property suite for the CLI


def verify_properties(seed: int = 7) -> list[tuple[str, bool, str]]:
    """Fast versions of the library's invariants; ``(name, ok, detail)`` per check."""
    from . import ghz, qsim
    from .coincidence import brute_force_fourfolds, find_fourfolds
    from .stats import uniformity_test

    out = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # report, don't crash the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))

    def gate_algebra():
        H, S, Z = (g.matrix for g in (qsim.LocalGate.Hadamard, qsim.LocalGate.SqrtZ, qsim.LocalGate.PauliZ))
        ok = np.allclose(H @ H, np.eye(2), atol=1e-12) and np.allclose(S @ S, Z, atol=1e-12)
        return ok, "H^2 = I, S^2 = Z"

    def ghz_to_phi0():
        st = ghz.make_ghz(4)
        for layer in ghz.ghz_to_phi0_gates(4):
            st = qsim.apply_local(st, layer)
        return qsim.equal_up_to_phase(st, ghz.make_phi0(4)), "H then SqrtZ on GHZ(4)"

    def transformation_laws():
        for s in ghz.even_subsets(4):
            ghz.transformation_property_check(4, s)
        return True, f"{len(ghz.even_subsets(4))} even subsets"

    def determinism():
        k = 3
        labels = [ghz.FamilyLabel(kd, sg, k, sub) for kd, sub in
                  ((ghz.FamilyKind.Phi0, ()), (ghz.FamilyKind.Phi1, ()), (ghz.FamilyKind.Psi0, (0,)),
                   (ghz.FamilyKind.Psi1, (0, 1, 2))) for sg in (1, -1)]
        for lab in labels:
            odd = lab.kind in (ghz.FamilyKind.Psi0, ghz.FamilyKind.Psi1)
            for s in (ghz.odd_subsets(k) if odd else ghz.even_subsets(k)):
                if min(ghz.honest_statistic_distribution(lab.state(), s)) > 1e-9:
                    return False, f"{lab.token} on {s}"
        w = adv.w_state(k)
        nondet = any(min(ghz.honest_statistic_distribution(w, s)) >= 0.05 for s in ghz.even_subsets(k))
        return nondet, "8 family states deterministic; W state not"

    def soundness():
        fam = [adv.scenario_pass_probability(adv.family_attack(3, 4, v, sg)) for v in adv.FAMILY_VARIANTS for sg in (1, -1)]
        naive = [adv.naive_attack(adv.w_state(3)).expected_pass, adv.naive_attack(qsim.StateVector.basis([0, 0, 0])).expected_pass]
        return all(abs(p - 1) < 1e-12 for p in fam) and all(p < 1 for p in naive), f"naive best {naive}"

    def parity_sampling():
        rng = np.random.default_rng(seed)
        idx = qsim.sample_indices(ghz.make_phi0(4), 100_000, rng)
        rep = uniformity_test(idx, [y for y in range(16) if bin(y).count("1") % 2 == 0])
        return rep.ok, f"p = {rep.p_value:.4f}"

    def ideal_election():
        res = run_experiment(ExperimentConfig(intents="EFFE", rounds=2000, master_seed=seed))
        return res.ok and res.outcome.status == "ok", res.outcome.status

    def coincidence_oracle():
        # dense enough that clusters overlap dark counts and the veto fires
        cfg = StreamConfig(fourfold_rate_hz=2e7, dark_rate_hz=2e6, jitter_ps=200, duration_s=5e-5)
        ev = generate_stream(cfg, seed=seed).events
        a, b = brute_force_fourfolds(ev, cfg.window_ps), find_fourfolds(ev, cfg.window_ps, chunk=97)
        return np.array_equal(a, b), f"{a.size} fourfolds from {ev.size} tags"

    for name, fn in [
        ("gate_algebra", gate_algebra),
        ("ghz_to_phi0", ghz_to_phi0),
        ("transformation_laws", transformation_laws),
        ("honest_statistic_determinism", determinism),
        ("soundness_dichotomy", soundness),
        ("parity_sampling", parity_sampling),
        ("ideal_election", ideal_election),
        ("coincidence_oracle", coincidence_oracle),
    ]:
        check(name, fn)
    return out
