"""Figure rendering for experiment reports.

Each experiment gets one or two matplotlib figures written next to its CSV
output; the data comes from the report's series payload, never recomputed.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_report"]


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    return path


def _rows_figure(report):
    names = [r.name for r in report.rows]
    measured = [max(r.measured, 1e-300) for r in report.rows]
    bounds = [max(r.bound, 1e-300) for r in report.rows]
    fig, ax = plt.subplots(figsize=(max(5, 0.6 * len(names)), 3.2))
    xs = np.arange(len(names))
    ax.bar(xs - 0.18, measured, width=0.36, label="measured")
    ax.bar(xs + 0.18, bounds, width=0.36, label="bound", alpha=0.6)
    ax.set_yscale("log")
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_title(report.experiment)
    ax.legend(fontsize=8)
    return fig


def render_report(report, out_dir):
    written = [_save(_rows_figure(report), out_dir, f"{report.experiment}_checks.png")]
    s = report.series
    exp = report.experiment

    if exp == "locallaw" and s.get("psi"):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        labels = sorted({tag for tag, _ in s["psi"]})
        for lab in labels:
            etas = [e for e, (tag, _) in zip(s["eta"], s["psi"]) if tag == lab]
            vals = [v for tag, v in s["psi"] if tag == lab]
            ax.plot(etas, vals, "o-", label=lab, ms=4)
        ax.axhline(s["bound"], color="k", ls="--", lw=1, label="bound")
        ax.set_xlabel(r"$\eta$")
        ax.set_ylabel(r"max $\Psi$")
        ax.set_xscale("log")
        ax.legend(fontsize=7, ncol=2)
        written.append(_save(fig, out_dir, "locallaw_psi.png"))

    elif exp == "decay" and "profile" in s:
        fig, ax = plt.subplots(figsize=(5, 3.4))
        d = np.asarray(s["distance"])
        ax.semilogy(d, np.maximum(s["profile"], 1e-300), label=r"smoothed $E|G|^2$")
        ax.semilogy(d, np.maximum(s["theta"], 1e-300), "--", label="two-point kernel")
        ax.axvline(s["ell"], color="gray", lw=1, label=r"$\ell$")
        ax.set_xlabel("periodic distance")
        ax.legend(fontsize=8)
        written.append(_save(fig, out_dir, "decay_profile.png"))

    elif exp == "que" and s.get("W"):
        fig, ax = plt.subplots(figsize=(4.4, 3.2))
        ax.plot(s["W"], s["overlap_max"], "o-")
        ax.set_xlabel("W")
        ax.set_ylabel("mean per-sample max overlap (normalized)")
        ax.set_xscale("log")
        ax.set_yscale("log")
        written.append(_save(fig, out_dir, "que_scaling.png"))

    elif exp == "traceless" and "eta" in s:
        fig, ax = plt.subplots(figsize=(5, 3.4))
        eta = np.asarray(s["eta"])
        ax.loglog(eta, s["m_plain"], "o-", label="M-term, plain")
        ax.loglog(eta, s["m_traceless"], "s-", label="M-term, traceless pair")
        ax.loglog(eta, s["fluct_plain"], "o--", label="fluct, plain", alpha=0.6)
        ax.loglog(eta, s["fluct_traceless"], "s--", label="fluct, traceless", alpha=0.6)
        ax.set_xlabel(r"$\eta$")
        ax.legend(fontsize=7)
        written.append(_save(fig, out_dir, "traceless_scaling.png"))

    elif exp == "spacing" and "band" in s:
        fig, ax = plt.subplots(figsize=(5, 3.4))
        bins = np.linspace(0, 1, 41)
        ax.hist(s["band"], bins=bins, density=True, alpha=0.55, label="band")
        ax.hist(s["reference"], bins=bins, density=True, histtype="step", lw=1.6,
                label="Gaussian reference")
        if "cross" in s:
            ax.hist(s["cross"], bins=bins, density=True, histtype="step", lw=1.2,
                    ls="--", label="cross-symmetry")
        ax.set_xlabel("gap ratio")
        ax.set_ylabel("density")
        ax.legend(fontsize=8)
        written.append(_save(fig, out_dir, "spacing_gap_ratios.png"))

    elif exp == "flow" and "trace" in s:
        t = [r["t"] for r in s["trace"]]
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
        ax1.plot(t, [r["psi_av"] for r in s["trace"]], "o-", label=r"$\Psi^{av}$")
        ax1.plot(t, [r["psi_iso"] for r in s["trace"]], "s-", label=r"$\Psi^{iso}$")
        ax1.set_xlabel("t")
        ax1.legend(fontsize=8)
        ax2.semilogy(t, [r["eta"] for r in s["trace"]], "o-")
        ax2.set_xlabel("t")
        ax2.set_ylabel(r"$\eta_t$")
        written.append(_save(fig, out_dir, "flow_trace.png"))

    return written
