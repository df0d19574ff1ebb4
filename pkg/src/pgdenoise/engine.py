"""Training engine: total-loss assembly, joint/frozen training, cross-validation.

Model kinds:

* ``vanilla``: the denoiser architecture trained with plain MSE against the
  noisy targets (no physics, no regularizer).
* ``pinn``: the physics network alone, trained on PDE residual and IC/BC
  losses (never sees the noisy data).
* ``denoiser-ebm`` / ``denoiser-fisher``: the full framework. The denoiser
  (coordinates + context + noisy value in) is tied to the physics prediction
  through the data loss while the regularizer scores its residuals against
  the noisy observations; in joint mode the physics network trains alongside,
  in frozen mode it stays bit-identical.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data_io import NoisyDataset
from .errors import ConfigurationError, TrainingDivergedError
from .metrics import rmse
from .network import Mlp
from .optim import AdamState, CosineSchedule, adam_step
from .problems import IcBcSet, ProblemSpec, sample_collocation
from .regularizers import EbmModel, FisherModel, ebm_nll, fisher_loss, make_reg_net

log = logging.getLogger(__name__)

MODEL_KINDS = ("vanilla", "pinn", "denoiser-ebm", "denoiser-fisher")

DIVERGENCE_FACTOR = 1e6
DIVERGENCE_PATIENCE = 100


@dataclass
class LossWeights:
    w_data: float = 1.0
    w_pde: float = 1.0
    w_ic: float = 1.0
    w_bc: float = 1.0
    w_reg: float = 1.0

    def validate(self):
        vals = (self.w_data, self.w_pde, self.w_ic, self.w_bc, self.w_reg)
        if any(v < 0 for v in vals):
            raise ConfigurationError("loss weights must be non-negative")
        if all(v == 0 for v in vals):
            raise ConfigurationError("at least one loss weight must be positive")


@dataclass
class RegSettings:
    """Regularizer configuration (kind is derived from the model kind)."""

    grid_size: int = 128
    grid_margin: float = 0.5
    score_weight: float = 0.1
    batch: int | None = 64  # residual rows scored per epoch; None = full batch
    joint_grid: bool = False
    detach: bool = False  # stop regularizer gradients into the denoiser (ablation)
    source: str = "denoiser"  # residual r = y_noisy - <source> prediction
    hidden: tuple[int, ...] = (24, 24, 24, 24)
    # how to scale the regularizer term by the (stop-gradient, normalized)
    # residual batch spread. The learned density sharpens as residuals
    # shrink, so the raw NLL pulls hardest exactly when the data is cleanest
    # ("none"); "std" makes the equilibrium pull independent of the noise
    # level, "var" makes it proportional to it
    pull_scale: str = "std"

    def validate(self):
        if self.source not in ("denoiser", "physics"):
            raise ConfigurationError("reg source must be 'denoiser' or 'physics'")
        if self.pull_scale not in ("none", "std", "var"):
            raise ConfigurationError("pull_scale must be 'none', 'std', or 'var'")
        if self.grid_size < 2:
            raise ConfigurationError("grid size must be at least 2")


@dataclass
class TrainPlan:
    """Everything one training run needs besides the problem and the data."""

    kind: str
    physics_mode: str = "joint"  # joint | frozen
    epochs: int = 2000
    seed: int = 0
    lr: float = 1e-3
    lr_min: float = 1e-6
    lbfgs_polish: int = 0  # quasi-Newton iterations on the physics loss after Adam
    # supervised epochs fitting the physics net to the problem's rough
    # closed-form field before any residual training (stiff sources only)
    warmstart_epochs: int = 0
    warmstart_lbfgs: int = 0  # quasi-Newton iterations on the supervised fit
    # weight of a consistency term tying the residual phase to the
    # warm-start field; without it the desk-size net prefers collapsing the
    # source peak to ambient over paying its own approximation error
    warmstart_anchor: float = 0.0
    # extra supervised weight on hot samples (0 = uniform): the peak region
    # is a vanishing volume fraction and an unweighted fit smooths it away
    warmstart_hot_weight: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    reg: RegSettings = field(default_factory=RegSettings)
    n_collocation: int = 512
    n_icbc: int = 128
    collocation_strategy: str = "sobol"
    f_sph: float = 0.5
    physics_hidden: tuple[int, ...] = (24, 24, 24)
    physics_activation: str = "sine"
    physics_sine_frequency: float = 6.0
    denoiser_hidden: tuple[int, ...] = (64, 64, 64, 64)
    denoiser_dropout: float = 0.15
    # start the denoiser blind to its noisy-value input (first-layer column
    # zeroed): at low noise the passthrough shortcut is otherwise learned
    # first and training plateaus there
    denoiser_blind_start: bool = True
    # when True the data loss also pulls physics toward the denoiser; off by
    # default because the pull degrades the PDE fit long before the denoiser
    # carries any signal
    couple_physics: bool = False
    k_folds: int = 4

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind '{self.kind}'")
        if self.physics_mode not in ("joint", "frozen"):
            raise ConfigurationError("physics_mode must be 'joint' or 'frozen'")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        self.weights.validate()
        self.reg.validate()


@dataclass
class TrainResult:
    kind: str
    physics: Mlp | None
    denoiser: Mlp | None
    reg_net: Mlp | None
    history: list[dict]
    plan: TrainPlan
    physics_hash_before: str | None = None
    physics_hash_after: str | None = None

    def predict(self, dataset: NoisyDataset) -> np.ndarray:
        """Eval-mode predictions at the dataset rows."""
        if self.kind == "pinn":
            x = np.hstack([dataset.coords, dataset.context])
            return self.physics.predict(x)
        x = np.hstack(
            [dataset.coords, dataset.context, dataset.y_noisy.reshape(-1, 1)]
        )
        return self.denoiser.predict(x)


def _uses_physics(kind: str) -> bool:
    return kind in ("pinn", "denoiser-ebm", "denoiser-fisher")


def _uses_denoiser(kind: str) -> bool:
    return kind in ("vanilla", "denoiser-ebm", "denoiser-fisher")


def _reg_kind(kind: str) -> str | None:
    return {"denoiser-ebm": "ebm", "denoiser-fisher": "fisher"}.get(kind)


class _Run:
    """Prepared state for one training run."""

    def __init__(
        self,
        plan: TrainPlan,
        problem: ProblemSpec,
        dataset: NoisyDataset | None,
        physics: Mlp | None,
    ):
        plan.validate()
        self.plan = plan
        self.problem = problem
        self.dataset = dataset
        kind = plan.kind
        if _uses_denoiser(kind) and dataset is None:
            raise ConfigurationError(f"model kind '{kind}' requires a noisy dataset")
        if dataset is not None and dataset.coords.shape[1] != problem.n_coords:
            raise ConfigurationError("dataset dimensions incompatible with problem")
        self.train_physics = _uses_physics(kind) and plan.physics_mode == "joint"
        root = np.random.default_rng(plan.seed)
        seeds = root.integers(0, 2**31 - 1, size=6)
        self.epoch_rng = np.random.default_rng(seeds[3])

        shift, scale = problem.input_norm()
        if _uses_physics(kind):
            if plan.physics_mode == "frozen":
                if physics is None:
                    raise ConfigurationError(
                        "physics checkpoint missing in frozen mode"
                    )
                self.physics = physics
            else:
                self.physics = Mlp.create(
                    [problem.n_coords + problem.n_context, *plan.physics_hidden, 1],
                    plan.physics_activation,
                    seed=int(seeds[0]),
                    input_norm=(shift, scale),
                    output_norm=problem.output_norm,
                    sine_frequency=plan.physics_sine_frequency,
                )
        else:
            self.physics = None

        if _uses_denoiser(kind):
            y = dataset.y_noisy
            y_mid = 0.5 * (float(y.max()) + float(y.min()))
            y_half = max(0.5 * (float(y.max()) - float(y.min())), 1e-12)
            self.denoiser = Mlp.create(
                [problem.n_coords + problem.n_context + 1, *plan.denoiser_hidden, 1],
                "tanh",
                dropout_rate=plan.denoiser_dropout,
                seed=int(seeds[1]),
                input_norm=(
                    np.concatenate([shift, [y_mid]]),
                    np.concatenate([scale, [y_half]]),
                ),
                output_norm=(y_mid, y_half),
            )
            if plan.denoiser_blind_start and plan.kind != "vanilla":
                wsl, _, nin, nout = next(self.denoiser.layer_slices())
                w1 = self.denoiser.params[wsl].reshape(nin, nout)
                w1[-1, :] = 0.0  # the noisy-value row of the first weight matrix
        else:
            self.denoiser = None

        reg_kind = _reg_kind(kind)
        if reg_kind is not None:
            # the engine feeds the regularizer batch-standardized residuals,
            # so the residual input column is already unit scale
            self.reg_net = make_reg_net(
                problem.n_coords + problem.n_context,
                (np.concatenate([shift, [0.0]]), np.concatenate([scale, [1.0]])),
                seed=int(seeds[2]),
                hidden=plan.reg.hidden,
            )
        else:
            self.reg_net = None
        self.reg_kind = reg_kind

        w = plan.weights
        self.need_pde = _uses_physics(kind) and w.w_pde > 0
        self.need_icbc = _uses_physics(kind) and (w.w_ic > 0 or w.w_bc > 0)
        if self.need_pde:
            self.colloc = sample_collocation(
                problem,
                plan.n_collocation,
                plan.collocation_strategy,
                seed=int(seeds[4]),
                f_sph=plan.f_sph,
            )
        else:
            self.colloc = None
        self.icbc: list[tuple[IcBcSet, np.ndarray, np.ndarray, np.ndarray]] = []
        if self.need_icbc:
            icbc_rng = np.random.default_rng(seeds[5])
            for cset in problem.ic_bc:
                coords, ctx, targets = cset.sample(plan.n_icbc, icbc_rng)
                self.icbc.append((cset, coords, ctx, targets))

        self.anchor = None
        if (
            plan.warmstart_anchor > 0
            and self.train_physics
            and problem.warmstart is not None
            and self.colloc is not None
        ):
            coords, ctx = self.colloc
            cols = [coords[:, i] for i in range(coords.shape[1])]
            cols += [ctx[:, j] for j in range(ctx.shape[1])]
            self.anchor = (cols, problem.warmstart(coords, ctx))

        if self.dataset is not None:
            self.data_cols = [dataset.coords[:, i] for i in range(problem.n_coords)]
            self.data_cols += [dataset.context[:, j] for j in range(problem.n_context)]
            self.reg_feats = np.hstack([dataset.coords, dataset.context])

    # -- loss assembly -------------------------------------------------------

    def physics_fwd(self, payload):
        net = self.physics

        def fwd(cols):
            return net.forward_cols(cols, params=payload)

        return fwd

    def physics_terms(self, payload) -> dict:
        """PDE + IC/BC loss payloads for the physics network."""
        comps = {}
        fwd = self.physics_fwd(payload)
        if self.need_pde:
            res = self.problem.residual(fwd, self.colloc[0], self.colloc[1])
            comps["pde"] = (res * res).mean()
        for cset, coords, ctx, targets in self.icbc:
            coord_cols = [coords[:, i] for i in range(coords.shape[1])]
            ctx_cols = [ctx[:, j] for j in range(ctx.shape[1])]
            if cset.kind == "value":
                err = fwd(coord_cols + ctx_cols) - targets
                err = err * (1.0 / self.physics.output_scale)
            else:
                dual = ad.dual2_eval(
                    lambda cs: fwd(cs + ctx_cols), coord_cols, seeds=[cset.deriv_dim]
                )
                # nondimensionalize the slope so value and derivative
                # constraints carry comparable weight
                err = (dual.grad[0] - targets) * (
                    self.physics.input_scale[cset.deriv_dim] / self.physics.output_scale
                )
            bucket = "ic" if cset.name.startswith("ic") else "bc"
            term = (err * err).mean()
            comps[bucket] = comps.get(bucket, 0.0) + term
        if self.anchor is not None:
            cols, targets = self.anchor
            err = (fwd(cols) - targets) * (1.0 / self.physics.output_scale)
            comps["anchor"] = self.plan.warmstart_anchor * (err * err).mean()
        return comps

    def data_and_reg_terms(self, payloads: dict, mode: str, rng) -> dict:
        comps = {}
        plan = self.plan
        ds = self.dataset
        inv_y = 1.0 / self.denoiser.output_scale  # keep data terms dimensionless
        den_cols = self.data_cols + [ds.y_noisy]
        den_out = self.denoiser.forward_cols(
            den_cols, params=payloads.get("denoiser"), mode=mode, rng=rng
        )
        if plan.kind == "vanilla":
            err = (den_out - ds.y_noisy) * inv_y
            comps["data"] = (err * err).mean()
            return comps
        phys_out = self.physics_fwd(payloads.get("physics"))(self.data_cols)
        target = phys_out if (plan.couple_physics and self.train_physics) else ad._value(phys_out)
        err = (den_out - target) * inv_y
        comps["data"] = (err * err).mean()
        if plan.weights.w_reg > 0 and self.reg_kind is not None:
            source = den_out if plan.reg.source == "denoiser" else phys_out
            r = ds.y_noisy - source
            if plan.reg.detach:
                r = ad._value(r)
            n = len(ds)
            if plan.reg.batch is not None and plan.reg.batch < n:
                idx = rng.choice(n, size=plan.reg.batch, replace=False) if rng is not None else np.arange(plan.reg.batch)
                idx.sort()
                r_sub = r[idx]
                feats = self.reg_feats[idx]
            else:
                r_sub, feats = r, self.reg_feats
            # standardize the residual batch so the learned density always has
            # unit spread; the pull factor reintroduces the physical scale
            s_raw = max(float(np.std(ad._value(r_sub))), 1e-12)
            r_hat = r_sub * (1.0 / s_raw)
            rpay = payloads.get("reg")
            if self.reg_kind == "ebm":
                model = EbmModel(self.reg_net, plan.reg.grid_size, plan.reg.grid_margin)
                reg_term = ebm_nll(
                    model, feats, r_hat, params=rpay, joint_grid=plan.reg.joint_grid
                )
            else:
                model = FisherModel(
                    self.reg_net,
                    plan.reg.grid_size,
                    plan.reg.grid_margin,
                    plan.reg.score_weight,
                )
                reg_term, score, fit = fisher_loss(model, feats, r_hat, params=rpay)
                comps["reg_score"] = score
                comps["reg_fit"] = fit
            if plan.reg.pull_scale != "none":
                rel = s_raw / self.denoiser.output_scale
                factor = rel if plan.reg.pull_scale == "std" else rel * rel
                reg_term = reg_term * factor
                comps["reg_scale"] = factor
            comps["reg"] = reg_term
        return comps


def _weighted_total(comps: dict, w: LossWeights):
    pieces = []
    for name, weight in (
        ("data", w.w_data),
        ("pde", w.w_pde),
        ("ic", w.w_ic),
        ("bc", w.w_bc),
        ("reg", w.w_reg),
        ("anchor", 1.0),  # pre-weighted where it is computed
    ):
        if name in comps and weight > 0:
            pieces.append(weight * comps[name])
    if not pieces:
        raise ConfigurationError(
            "no active loss terms: the weights zero out everything this kind computes"
        )
    total = pieces[0]
    for p in pieces[1:]:
        total = total + p
    return total


def total_loss(
    plan: TrainPlan,
    problem: ProblemSpec,
    dataset: NoisyDataset | None,
    physics: Mlp | None = None,
    denoiser: Mlp | None = None,
    reg_net: Mlp | None = None,
) -> tuple[float, dict]:
    """Assemble the weighted total loss once, in eval mode, for given models.

    Mostly a diagnostic/reporting entry point; training uses the same
    assembly on the tape.
    """
    run = _Run(plan, problem, dataset, physics)
    if denoiser is not None:
        run.denoiser = denoiser
    if reg_net is not None:
        run.reg_net = reg_net
    if physics is not None:
        run.physics = physics
    comps = {}
    if _uses_physics(plan.kind):
        comps.update(run.physics_terms(None))
    if _uses_denoiser(plan.kind):
        comps.update(run.data_and_reg_terms({}, mode="eval", rng=None))
    comps = {k: float(ad._value(v)) for k, v in comps.items()}
    total = float(ad._value(_weighted_total(comps, plan.weights)))
    return total, comps


def train(
    plan: TrainPlan,
    problem: ProblemSpec,
    dataset: NoisyDataset | None = None,
    physics: Mlp | None = None,
) -> TrainResult:
    """Train one model kind; deterministic given the plan seed.

    In frozen mode the supplied physics network's parameters are never
    touched (hash-checked into the result). Divergence (loss exceeding 1e6
    times the initial value for 100 consecutive epochs) aborts with the
    history attached.
    """
    run = _Run(plan, problem, dataset, physics)
    hash_before = run.physics.content_hash() if run.physics is not None else None

    trainables: dict[str, np.ndarray] = {}
    if run.train_physics:
        trainables["physics"] = run.physics.params.copy()
    if run.denoiser is not None:
        trainables["denoiser"] = run.denoiser.params.copy()
    if run.reg_net is not None:
        trainables["reg"] = run.reg_net.params.copy()
    names = list(trainables)

    schedule = CosineSchedule(lr0=plan.lr, lr_min=plan.lr_min, total_steps=max(plan.epochs, 1))
    states = {n: AdamState.init(trainables[n].size, schedule=copy.deepcopy(schedule)) for n in names}

    frozen_comps: dict[str, float] = {}
    if _uses_physics(plan.kind) and not run.train_physics:
        frozen_comps = {
            k: float(ad._value(v)) for k, v in run.physics_terms(None).items()
        }

    history: list[dict] = []
    if (
        plan.warmstart_epochs > 0
        and run.train_physics
        and problem.warmstart is not None
    ):
        coords, ctx = run.colloc if run.colloc is not None else (None, None)
        if coords is None:
            raise ConfigurationError("warm start needs collocation points")
        targets = problem.warmstart(coords, ctx)
        cols = [coords[:, i] for i in range(coords.shape[1])]
        cols += [ctx[:, j] for j in range(ctx.shape[1])]
        weights = np.ones_like(targets)
        if plan.warmstart_hot_weight > 0:
            rise = targets - targets.min()
            span = max(float(rise.max()), 1e-12)
            weights += plan.warmstart_hot_weight * rise / span
            weights /= weights.mean()
        ws_state = AdamState.init(
            trainables["physics"].size,
            schedule=CosineSchedule(
                lr0=plan.lr, lr_min=plan.lr_min, total_steps=plan.warmstart_epochs
            ),
        )
        inv_scale = 1.0 / run.physics.output_scale

        def ws_loss(pv):
            err = (run.physics.forward_cols(cols, params=pv) - targets) * inv_scale
            return (err * err * weights).mean()

        for _ in range(plan.warmstart_epochs):
            tape = ad.Tape()
            pv = tape.leaf(trainables["physics"])
            loss = ws_loss(pv)
            g = ad.grad(loss, [pv])[0]
            trainables["physics"] = adam_step(ws_state, trainables["physics"], g)
            history.append({"warmstart": float(ad._value(loss)), "total": float(ad._value(loss))})
        if plan.warmstart_lbfgs > 0:
            from .optim import lbfgs_minimize

            def ws_objective(p):
                tape = ad.Tape()
                pv = tape.leaf(p)
                loss = ws_loss(pv)
                return float(ad._value(loss)), ad.grad(loss, [pv])[0]

            fit = lbfgs_minimize(
                ws_objective,
                trainables["physics"],
                max_iters=plan.warmstart_lbfgs,
                grad_tol=1e-14,
            )
            trainables["physics"] = fit.x
            history.extend({"warmstart": v, "total": v} for v in fit.trace[1:])

    initial_total = None
    n_diverged = 0
    for epoch in range(plan.epochs):
        tape = ad.Tape()
        payloads = {n: tape.leaf(trainables[n]) for n in names}
        comps: dict = {}
        if run.train_physics:
            comps.update(run.physics_terms(payloads["physics"]))
        if run.denoiser is not None:
            comps.update(run.data_and_reg_terms(payloads, "train", run.epoch_rng))
        total = _weighted_total(comps, plan.weights)
        grads = ad.grad(total, [payloads[n] for n in names])
        for n, g in zip(names, grads):
            trainables[n] = adam_step(states[n], trainables[n], g)
        record = {k: float(ad._value(v)) for k, v in comps.items()}
        record.update(frozen_comps)
        record["total"] = float(ad._value(total)) + sum(
            w * frozen_comps.get(k, 0.0)
            for k, w in (
                ("pde", plan.weights.w_pde),
                ("ic", plan.weights.w_ic),
                ("bc", plan.weights.w_bc),
            )
        )
        history.append(record)
        if initial_total is None:
            initial_total = max(abs(record["total"]), 1e-12)
        if record["total"] > DIVERGENCE_FACTOR * initial_total:
            n_diverged += 1
            if n_diverged >= DIVERGENCE_PATIENCE:
                raise TrainingDivergedError(
                    f"loss exceeded {DIVERGENCE_FACTOR:g} x initial for "
                    f"{DIVERGENCE_PATIENCE} consecutive epochs at epoch {epoch}",
                    history=history,
                )
        else:
            n_diverged = 0

    if run.train_physics and plan.lbfgs_polish > 0 and plan.kind == "pinn":
        from .optim import lbfgs_minimize

        def physics_objective(p):
            tape = ad.Tape()
            pv = tape.leaf(p)
            comps = run.physics_terms(pv)
            total = _weighted_total(comps, plan.weights)
            g = ad.grad(total, [pv])[0]
            return float(ad._value(total)), g

        polish = lbfgs_minimize(
            physics_objective,
            trainables["physics"],
            max_iters=plan.lbfgs_polish,
            grad_tol=1e-12,
        )
        trainables["physics"] = polish.x
        history.extend({"total": v, "phase": 1.0} for v in polish.trace[1:])

    trained = (
        plan.epochs > 0
        or (plan.lbfgs_polish > 0 and plan.kind == "pinn")
        or (plan.warmstart_epochs > 0 and run.train_physics and problem.warmstart is not None)
    )
    if run.train_physics and trained:
        run.physics.params = trainables["physics"]
    if run.denoiser is not None and plan.epochs > 0:
        run.denoiser.params = trainables["denoiser"]
    if run.reg_net is not None and plan.epochs > 0:
        run.reg_net.params = trainables["reg"]

    return TrainResult(
        kind=plan.kind,
        physics=run.physics,
        denoiser=run.denoiser,
        reg_net=run.reg_net,
        history=history,
        plan=plan,
        physics_hash_before=hash_before,
        physics_hash_after=run.physics.content_hash() if run.physics is not None else None,
    )


def cross_validate(
    plan: TrainPlan,
    problem: ProblemSpec,
    dataset: NoisyDataset,
    k: int | None = None,
    physics: Mlp | None = None,
) -> tuple[list[float], float]:
    """Contiguous k-fold split by row index; per-fold held-out RMSE.

    Metrics are computed against y_true when the dataset carries it, else
    against the noisy values.
    """
    k = plan.k_folds if k is None else k
    n = len(dataset)
    if k < 2:
        raise ConfigurationError("cross-validation needs k >= 2")
    if n < k:
        raise ConfigurationError(f"dataset of {n} rows cannot make {k} folds")
    bounds = np.linspace(0, n, k + 1).astype(int)
    fold_rmses = []
    for fi in range(k):
        lo, hi = bounds[fi], bounds[fi + 1]
        if hi - lo < 2:
            raise ConfigurationError(f"fold {fi} has fewer than 2 rows")
        test_idx = np.arange(lo, hi)
        train_idx = np.concatenate([np.arange(0, lo), np.arange(hi, n)])
        result = train(plan, problem, dataset.subset(train_idx), physics=physics)
        held = dataset.subset(test_idx)
        pred = result.predict(held)
        ref = held.y_true if held.y_true is not None else held.y_noisy
        fold_rmses.append(rmse(ref, pred))
    return fold_rmses, float(np.mean(fold_rmses))
