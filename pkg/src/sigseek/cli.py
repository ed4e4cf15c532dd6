"""Command-line pipeline: generate, train, encode, ingest, index, query, eval, serve.

Every stage reads and writes the package's documented file formats, takes a
--seed wherever randomness exists, and is idempotent for identical inputs.
Exit codes: 0 success, 2 usage, 3 data-format, 4 contract violation. Errors
print one line to stderr: "<category>: <message>".

The shard binary layout doubles as the raw record-stream container: encode
writes a single-shard file, ingest re-shards it spatially.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import corpus, evaluation, mih, store as store_mod
from .errors import ContractViolation, DataFormatError, SigseekError
from .sigcore import VoxelCoord, sig_from_hex
from .trainer import AugmentationConfig, LossConfig
from .trainer import encoder as encoder_mod
from .trainer import train as run_training

EXIT_DATA_FORMAT = 3
EXIT_CONTRACT = 4


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DataFormatError as e:
            click.echo(f"data-format: {e}", err=True)
            sys.exit(EXIT_DATA_FORMAT)
        except (ContractViolation, SigseekError) as e:
            click.echo(f"contract: {e}", err=True)
            sys.exit(EXIT_CONTRACT)

    return wrapper


@click.group()
def main():
    """Query-by-example mining over 64-bit patch signatures."""


# ---------------------------------------------------------------------------
@main.command()
@click.option("--extent", type=int, default=128, show_default=True)
@click.option("--classes", default="blob,ring", show_default=True,
              help="comma-separated motif kinds (blob, bar, ring)")
@click.option("--counts", default="60,60", show_default=True,
              help="comma-separated site count per class")
@click.option("--noise", type=float, default=0.05, show_default=True)
@click.option("--min-spacing", type=float, default=12.0, show_default=True)
@click.option("--margin", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def generate(extent, classes, counts, noise, min_spacing, margin, seed, out):
    """Write a synthetic volume (VOL1) and its ground-truth site sidecar."""
    kinds = [k.strip() for k in classes.split(",") if k.strip()]
    ns = [int(v) for v in counts.split(",")]
    specs = [corpus.MotifClass(i, kind) for i, kind in enumerate(kinds)]
    vol = corpus.generate_volume(
        (extent, extent, extent), specs, ns, noise_sigma=noise,
        seed=seed, min_spacing=min_spacing, margin=margin,
    )
    corpus.save_volume(vol, out)
    click.echo(f"wrote {out} ({extent}^3, {len(vol.motif_sites)} sites) "
               f"and {corpus.sites_path(out)}")


# ---------------------------------------------------------------------------
@main.command(name="train")
@click.option("--volume", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--patch", type=int, default=12, show_default=True,
              help="patch extent per axis")
@click.option("--steps", type=int, default=1000, show_default=True)
@click.option("--lr", type=float, default=0.02, show_default=True)
@click.option("--pairs", type=int, default=8, show_default=True)
@click.option("--tau", type=float, default=0.1, show_default=True)
@click.option("--loss", type=click.Choice(["nt_xent", "triplet"]), default="nt_xent",
              show_default=True)
@click.option("--margin", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--binarize", is_flag=True,
              help="train with the sign output layer (requires --init-from)")
@click.option("--init-from", type=click.Path(exists=True, dir_okay=False),
              help="checkpoint to initialize weights from")
@click.option("--allow-binarize-from-scratch", is_flag=True)
@click.option("--site-fraction", type=float, default=0.5, show_default=True,
              help="fraction of training patches drawn near ground-truth sites")
@click.option("--trace-out", type=click.Path(dir_okay=False),
              help="optional CSV of per-step loss values")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def train_cmd(volume, patch, steps, lr, pairs, tau, loss, margin, seed, binarize,
              init_from, allow_binarize_from_scratch, site_fraction, trace_out, out):
    """Train the encoder on patches sampled from a volume."""
    data = corpus.load_volume(volume)
    sites = None
    sp = corpus.sites_path(volume)
    if sp.exists():
        sites = corpus.load_sites(sp)
    patch_shape = (patch,) * data.ndim
    if init_from:
        model = encoder_mod.load_model(init_from)
        model.pretrained = True
        if binarize:
            model.binarize = True
    else:
        model = encoder_mod.init_encoder(patch_shape, binarize=binarize, seed=seed)
    sampler = corpus.make_patch_sampler(data, patch_shape, sites,
                                        site_fraction=site_fraction)
    result = run_training(
        sampler, model,
        LossConfig(kind=loss, temperature=tau, margin=margin, batch_pairs=pairs),
        AugmentationConfig(),
        steps=steps, learning_rate=lr, seed=seed,
        allow_binarize_from_scratch=allow_binarize_from_scratch,
    )
    encoder_mod.save_model(result.model, out)
    if trace_out:
        Path(trace_out).write_text(
            "step,loss\n"
            + "".join(f"{i},{v}\n" for i, v in enumerate(result.loss_trace))
        )
    tail = np.mean(result.loss_trace[-50:]) if result.loss_trace else float("nan")
    click.echo(f"wrote {out} (loss tail mean {tail:.4f})")


# ---------------------------------------------------------------------------
@main.command()
@click.option("--volume", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--stride", type=int, default=4, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def encode(volume, model, stride, out):
    """Encode every stride-grid patch to a signature record stream."""
    data = corpus.load_volume(volume)
    m = encoder_mod.load_model(model)
    records = corpus.encode_volume(data, m, m.patch_shape, stride)
    store_mod.write_record_file(records, out, extent=data.shape)
    click.echo(f"wrote {out} ({len(records)} records)")


# ---------------------------------------------------------------------------
@main.command()
@click.option("--records", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--shard-size", type=int, default=64, show_default=True)
@click.option("--stride", type=int, default=4, show_default=True)
@click.option("--max-duplicates", type=int, default=16, show_default=True)
@click.option("--extent", type=int, default=None,
              help="volume extent per axis; defaults to the record bounding box")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@guarded
def ingest(records, shard_size, stride, max_duplicates, extent, out):
    """Shard a record stream into a store directory."""
    recs = store_mod.read_record_file(records)
    ext = (extent,) * 3 if extent else None
    st = store_mod.ingest(recs, shard_size=shard_size, stride=stride,
                          max_duplicates=max_duplicates, extent=ext)
    store_mod.save_store(st, out)
    click.echo(f"wrote {out} ({len(st)} records in {len(st.shards)} shards)")


# ---------------------------------------------------------------------------
@main.command(name="build-index")
@click.option("--store", "store_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--n", "partition_count", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def build_index_cmd(store_dir, partition_count, seed, out):
    """Build the multi-index over a store's records."""
    st = store_mod.load_store(store_dir)
    index = mih.build_index(list(st.iter_records()), partition_count, seed)
    mih.save_index(index, out)
    click.echo(f"wrote {out} ({len(index)} records, n={partition_count})")


# ---------------------------------------------------------------------------
@main.command()
@click.option("--index", "index_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--store", "store_dir", type=click.Path(exists=True, file_okay=False),
              help="needed for point queries")
@click.option("--x", type=int)
@click.option("--y", type=int)
@click.option("--z", type=int)
@click.option("--signature", "signature_hex", type=str)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--t", type=float, default=8.0, show_default=True)
@guarded
def query(index_path, store_dir, x, y, z, signature_hex, k, t):
    """Ranked matches for a point or signature; JSON on stdout."""
    index = mih.load_index(index_path)
    has_point = x is not None or y is not None or z is not None
    if has_point == (signature_hex is not None):
        raise ContractViolation("provide either --x/--y/--z or --signature")
    self_site = None
    if signature_hex is not None:
        sig = sig_from_hex(signature_hex)
    else:
        if x is None or y is None or z is None:
            raise ContractViolation("point queries need all of --x --y --z")
        if store_dir is None:
            raise ContractViolation("point queries need --store for site lookup")
        st = store_mod.load_store(store_dir)
        res = store_mod.lookup_signature(st, VoxelCoord(x, y, z))
        sig, self_site = res.record.sig, res.record.coord
    qs = evaluation.QuerySet.from_signatures([(self_site or VoxelCoord(0, 0, 0), sig)])
    matches = []
    for p in evaluation.run_query(index, qs, t=t, k=k):
        entry = {"x": p.coord.x, "y": p.coord.y, "z": p.coord.z,
                 "distance": p.distance, "rank": p.rank}
        if self_site is not None:
            entry["self"] = p.coord == self_site and p.distance == 0.0
        matches.append(entry)
    click.echo(json.dumps({"matches": matches}, sort_keys=True))


# ---------------------------------------------------------------------------
@main.command(name="eval")
@click.option("--index", "index_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--sites", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--class-id", type=int, default=0, show_default=True)
@click.option("--queries", type=int, default=5, show_default=True,
              help="number of class sites used as single-query seeds")
@click.option("--radius", type=float, default=6.0, show_default=True)
@click.option("--t", type=float, default=8.0, show_default=True)
@click.option("--k", type=int, default=50, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--curve-out", type=click.Path(dir_okay=False),
              help="optional CSV of mean interpolated precision per rank")
@guarded
def eval_cmd(index_path, sites, class_id, queries, radius, t, k, out, curve_out):
    """Single-query retrieval metrics averaged over ground-truth seeds."""
    index = mih.load_index(index_path)
    all_sites = corpus.load_sites(sites)
    truth = [c for c, cid in all_sites if cid == class_id]
    if len(truth) < queries:
        raise ContractViolation(
            f"only {len(truth)} sites of class {class_id}, need {queries} queries"
        )
    curves = []
    for seed_coord in truth[:queries]:
        rec = index.record_at(seed_coord) or mih.nearest_record(index, seed_coord)
        qs = evaluation.QuerySet.from_signatures([(rec.coord, rec.sig)])
        preds = evaluation.run_query(index, qs, t=t, k=k)
        report = evaluation.score_predictions(preds, truth, radius)
        curve = np.zeros(k)
        curve[: len(report.interpolated)] = report.interpolated
        if 0 < len(report.interpolated) < k:
            curve[len(report.interpolated):] = report.interpolated[-1]
        curves.append(curve)
    mean_curve = np.mean(curves, axis=0)
    lines = []
    for rank in (1, 5, 10, 20, 50):
        if rank <= k:
            lines.append(f"interpolated_precision_at_{rank} {mean_curve[rank - 1]:.6f}")
    lines.append(f"queries {queries}")
    lines.append(f"truth_sites {len(truth)}")
    Path(out).write_text("\n".join(lines) + "\n")
    if curve_out:
        Path(curve_out).write_text(
            "rank,mean_interpolated_precision\n"
            + "".join(f"{i + 1},{v:.6f}\n" for i, v in enumerate(mean_curve))
        )
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
@main.command(name="simulate-recall")
@click.option("--n", "partition_count", type=int, default=4, show_default=True)
@click.option("--bits", type=int, default=64, show_default=True)
@click.option("--trials", type=int, default=200_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False),
              help="CSV path; stdout when omitted")
@guarded
def simulate_recall(partition_count, bits, trials, seed, out):
    """Monte-Carlo recall-vs-distance curve for the partition scheme."""
    curve = mih.recall_simulation(partition_count, bits, trials, seed)
    text = "distance,recall\n" + "".join(
        f"{d},{v:.6f}\n" for d, v in enumerate(curve)
    )
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


# ---------------------------------------------------------------------------
def load_service_state(config: dict):
    """Build the HTTP service state from a config mapping (file paths inside)."""
    from .service import ServiceConfig, ServiceState

    cfg = ServiceConfig(
        nms_threshold=float(config.get("t", 8.0)),
        top_k=int(config.get("k", 50)),
        rank_n=int(config.get("rank_n", 10)),
        patch_size_cap=int(config.get("patch_size_cap", 256)),
        session_log=Path(config["session_log"]) if config.get("session_log") else None,
    )
    state = ServiceState(config=cfg)
    if config.get("volume"):
        state.volume = corpus.load_volume(config["volume"])
    if config.get("store"):
        state.store = store_mod.load_store(config["store"])
    if config.get("index"):
        state.index = mih.load_index(config["index"])
    state.ready = state.store is not None and state.index is not None
    return state


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True,
              help="JSON: volume, store, index, t, k, rank_n, host, port")
@click.option("--host", default=None, help="bind address (overrides config)")
@click.option("--port", type=int, default=None, help="port (overrides config)")
@guarded
def serve(config_path, host, port):
    """Run the HTTP query service; flags win over config values."""
    import uvicorn

    from .service import create_app

    config = json.loads(Path(config_path).read_text())
    host = host if host is not None else config.get("host", "127.0.0.1")
    port = port if port is not None else int(config.get("port", 8400))
    state = load_service_state(config)
    app = create_app(state)
    click.echo(f"serving on {host}:{port} "
               f"(store={state.store is not None}, index={state.index is not None})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
