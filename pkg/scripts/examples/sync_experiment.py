"""
Desk-scale synchronization experiment.

Trains bridged and no-bridge models over several seeds, compares their median
sync offsets, then sweeps the bridge guidance scale on a bridged model.
Results land in a run directory like every CLI run.

    python scripts/examples/sync_experiment.py --steps 2000 --scenes 16
"""

import argparse
import dataclasses

from avlab import lab
from avlab.config import to_dict
from avlab.engine import OptimizerGroups, SampleConfig, TrainConfig, bridge_ablation, sweep_s_b, train
from avlab.model import DualTowerModel, ModelConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--batch", type=int, default=4)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--scenes", type=int, default=16)
    parser.add_argument("--n-steps", type=int, default=25)
    parser.add_argument("--s-t", type=float, default=5.0)
    parser.add_argument("--s-b-values", type=float, nargs="+", default=[1.0, 2.0, 3.0, 3.5])
    parser.add_argument("--tiny", action="store_true")
    parser.add_argument("--log-to-wandb", action="store_true")
    args = parser.parse_args()

    base_model = ModelConfig.tiny() if args.tiny else ModelConfig()
    train_cfg = TrainConfig(steps=args.steps, batch=args.batch)
    sample_cfg = SampleConfig(n_steps=args.n_steps, s_T=args.s_t)
    groups = OptimizerGroups()
    config = {
        "model": to_dict(base_model),
        "train": to_dict(train_cfg),
        "optim": to_dict(groups),
        "sample": to_dict(sample_cfg),
        "options": {"seeds": args.seeds, "scenes": args.scenes, "s_b_values": args.s_b_values},
    }

    if args.log_to_wandb:
        import wandb

        wandb.init(project="avlab-sync", config=config)

    try:
        lab.init("sync-experiment", subcommand="experiment", config=config, seed=args.seeds[0])

        def factory(seed):
            return DualTowerModel(dataclasses.replace(base_model, seed=seed))

        lab.log(f"bridge ablation over seeds {args.seeds}, {args.steps} steps each")
        ablation = bridge_ablation(factory, train_cfg, sample_cfg, seeds=args.seeds, groups=groups, n_scenes=args.scenes)
        lab.log(
            f"median offset with bridge {ablation['bridge_median_s']:.3f} s, "
            f"without {ablation['no_bridge_median_s']:.3f} s "
            f"({100 * ablation['relative_reduction']:.1f}% lower)"
        )
        lab.save_json("ablation.json", ablation)
        lab.update_progress(70)

        model = train(factory(args.seeds[0]), dataclasses.replace(train_cfg, seed=args.seeds[0]), groups).model
        sweep = sweep_s_b(model, args.s_b_values, sample_cfg, n_scenes=args.scenes, seed=args.seeds[0])
        for row in sweep["rows"]:
            lab.log(f"s_B={row['s_B']:g}: median offset {row['median_offset_s']:.3f} s")
        lab.log(f"spearman rho {sweep['spearman_rho']:.3f}")
        lab.save_json("sweep.json", sweep)

        lab.finish(
            "sync experiment complete",
            score={"relative_reduction": ablation["relative_reduction"], "spearman_rho": sweep["spearman_rho"]},
        )
    except KeyboardInterrupt:
        lab.error("Stopped by user")
    except Exception as e:
        lab.error(str(e))
        raise
    finally:
        if args.log_to_wandb:
            wandb.finish()


if __name__ == "__main__":
    main()
