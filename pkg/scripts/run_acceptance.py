#!/usr/bin/env python3
"""
Desk-scale Acceptance Sweep

This script:
1. Checks the parameter-count identity and the PSD filter machinery
2. Runs the gradient-relation check on d=3
3. Scans the steerability phase diagram and the entropy-coefficient ordering
4. Runs the scaling study and fits the convergence rates
5. Compares randomized recovery against fine-tuning
6. Prints a pass/fail table
"""

import sys
import time
import argparse
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / "src"))

from experiments import (
    analyze_psd, profile_manager, run_finetune, run_gradient_relation_check,
    run_phase_diagram, run_randomized_recovery, run_scaling, run_steering,
    steering_advantage,
)
from circuit import build_surface_code_memory
from noise_model import sample_error_model, total_parameter_count
from schema import DecoderMethod, ExperimentConfig

Check = Tuple[bool, str]


def check_parameter_count(cfg: ExperimentConfig) -> Check:
    """Parameters of built circuits match P_tot, including 38670 at d=15, P=30"""
    counted = {}
    for d, P in [(3, 1), (5, 2), (15, 30)]:
        model = sample_error_model(cfg.seed, build_surface_code_memory(d, 1), P=P)
        counted[(d, P)] = model.num_params
    ok = counted[(15, 30)] == 38_670
    ok &= all(n == total_parameter_count(d, P) for (d, P), n in counted.items())
    return ok, f"P_tot(15, 30) = {counted[(15, 30)]} counted on the circuit"


def check_psd(cfg: ExperimentConfig) -> Check:
    """Identical traces give 0 dB; a 2x-attenuated low band gives about -6 dB"""
    rng = np.random.default_rng(cfg.seed)
    fixed, steered = [], []
    for _ in range(20):
        trace = 1.0 + 0.1 * rng.standard_normal(1024)
        spectrum = np.fft.rfft(trace)
        spectrum[1:64] *= 0.5
        fixed.append(trace)
        steered.append(np.fft.irfft(spectrum, n=trace.size))
    same = analyze_psd(fixed, fixed)
    low = analyze_psd(fixed, steered)
    plateau = low.filter_db[low.freqs < 32 / 1024]
    ok = np.allclose(same.filter_db, 0.0) and abs(plateau.mean() + 6.02) <= 1.5
    return ok, f"low-band plateau {plateau.mean():.2f} dB"


def check_gradient_relation(cfg: ExperimentConfig) -> Check:
    relation = run_gradient_relation_check(cfg, quiet=True)
    return 1.5 <= relation.slope <= 2.5, f"slope {relation.slope:.3f} +/- {relation.slope_stderr:.2g}"


def check_phase_boundary(cfg: ExperimentConfig) -> Check:
    f_list = [1 / 1000, 1 / 300, 1 / 30]
    lambdas = [0.1, 0.01, 0.001]
    diagram = run_phase_diagram(cfg, f_list, lambdas, quiet=True)
    slow = diagram.point(1 / 1000, 0.01)
    fast_ok = all((diagram.point(1 / 30, lam).r_stochastic or 0.0) <= 0 for lam in lambdas)
    learned_ok = all(
        p.r_learned is not None and p.r_stochastic is not None and p.r_learned > p.r_stochastic
        for p in diagram.points
    )
    slow_ok = slow.r_stochastic is not None and slow.r_stochastic > 0.3
    return slow_ok and fast_ok and learned_ok, f"r_stochastic(1/1000, 0.01) = {slow.r_stochastic}"


def check_entropy_ordering(cfg: ExperimentConfig) -> Check:
    votes = 0
    for seed in range(3):
        events = {}
        for lam in (0.1, 0.01, 0.001):
            run_cfg = cfg.with_overrides(**{
                "seed": cfg.seed + seed,
                "noise.drift.kind": "sinusoid",
                "noise.drift.frequency": 1 / 1000,
                "agent.entropy_coef": lam,
            })
            events[lam] = steering_advantage(run_steering(run_cfg, quiet=True)).n_stochastic
        votes += events[0.01] < min(events[0.1], events[0.001])
    return votes >= 2, f"{votes}/3 seeds favour lambda_H = 0.01"


def check_scaling(cfg: ExperimentConfig) -> Check:
    result = run_scaling(cfg.with_overrides(**{"evaluation.decoder": DecoderMethod.UNION_FIND.value}), quiet=True)
    runs = {(run.d, run.P): run for run in result.runs}
    fits_ok = all(run.gamma.r_squared >= 0.8 for run in result.runs)
    overlap_ok = True
    for P in cfg.scaling.params_per_site:
        small, large = runs.get((min(cfg.scaling.distances), P)), runs.get((max(cfg.scaling.distances), P))
        if small and large:
            overlap_ok &= small.gamma.ci_low <= large.gamma.ci_high and large.gamma.ci_low <= small.gamma.ci_high
    gammas: Dict[int, List[float]] = {}
    for run in result.runs:
        gammas.setdefault(run.P, []).append(run.gamma.gamma_exp)
    means = {P: float(np.nanmean(v)) for P, v in gammas.items()}
    order_ok = len(means) < 2 or means[max(means)] < means[min(means)]
    return fits_ok and overlap_ok and order_ok, f"mean gamma by P: {means}"


def check_recovery(cfg: ExperimentConfig) -> Check:
    recovered = run_randomized_recovery(cfg, quiet=True)
    tuned = run_finetune(cfg, quiet=True)
    within = recovered.final_p_err <= 1.5 * recovered.calibrated_p_err
    slower = (recovered.epochs_to_target or cfg.epochs + 1) > (tuned.epochs_to_target or 0)
    return within and slower, (
        f"P_err {recovered.final_p_err:.4f} vs calibrated {recovered.calibrated_p_err:.4f}; "
        f"epochs {recovered.epochs_to_target} vs fine-tune {tuned.epochs_to_target}"
    )


CHECKS: Dict[str, Callable[[ExperimentConfig], Check]] = {
    "parameter-count": check_parameter_count,
    "psd": check_psd,
    "gradient-relation": check_gradient_relation,
    "phase-boundary": check_phase_boundary,
    "entropy-ordering": check_entropy_ordering,
    "scaling": check_scaling,
    "recovery": check_recovery,
}


def main():
    """Run the selected acceptance checks and print a pass/fail table"""
    parser = argparse.ArgumentParser(description="Desk-scale acceptance sweep for qec-steer")
    parser.add_argument("--profile", default="desk",
                        help="Config preset (default: desk; smoke for a quick plumbing pass)")
    parser.add_argument("--only", nargs="+", choices=list(CHECKS),
                        help="Run only these checks")
    parser.add_argument("--threads", type=int, default=1, help="Worker threads")
    parser.add_argument("--seed", type=int, default=0, help="Root seed")
    args = parser.parse_args()

    cfg = profile_manager.get_config(args.profile)
    if cfg is None:
        print(f"❌ Unknown profile '{args.profile}'; choose one of {profile_manager.get_supported_profiles()}")
        sys.exit(1)
    cfg = cfg.with_overrides(seed=args.seed, threads=args.threads)

    print("🚀 qec-steer acceptance sweep")
    print("=" * 60)
    print(f"📋 Profile: {args.profile}, seed {args.seed}, {args.threads} threads")

    results: List[Tuple[str, bool, str, float]] = []
    for name in args.only or list(CHECKS):
        print(f"\n🔧 Running {name}...")
        start = time.time()
        try:
            passed, detail = CHECKS[name](cfg)
        except Exception as e:
            passed, detail = False, f"error: {e}"
        elapsed = time.time() - start
        print(f"{'✅' if passed else '❌'} {name}: {detail} ({elapsed:.1f}s)")
        results.append((name, passed, detail, elapsed))

    print("\n📊 Summary")
    print("=" * 60)
    for name, passed, detail, elapsed in results:
        print(f"{'✅ PASS' if passed else '❌ FAIL'}  {name:<20} {elapsed:>8.1f}s  {detail}")

    failed = sum(not passed for _, passed, _, _ in results)
    if failed:
        print(f"\n⚠️ {failed} of {len(results)} checks failed")
        sys.exit(1)
    print(f"\n🎉 All {len(results)} checks passed")


if __name__ == "__main__":
    main()
