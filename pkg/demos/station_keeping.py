"""Fly one day on the layered-shear benchmark and print where the agent went.

Run with ``python3 demos/station_keeping.py [horizon_hours]``.
"""

import sys

import numpy as np

from podmpc import assemble_rom, config_from_dict, episode_metrics, pod_decompose, run_episode, snapshot_campaign


def main(horizon=3.0):
    cfg = config_from_dict({})
    snaps = snapshot_campaign(cfg.build_wind(), cfg.build_grid(), cfg.snapshot_times())
    basis = pod_decompose(snaps, cfg.pod.energy_fraction, cfg.pod.max_modes)
    model = assemble_rom(basis, cfg.rom.nu, cfg.rom.length_unit)
    print(f"{basis.n} modes capture {basis.captured_energy()[-1]:.4f} of the fluctuation energy")

    sc = cfg.build_scenario()
    log = run_episode(sc, basis, model, cfg.ekf_config(basis.n, sc.sensors.n_rows()), cfg.planner_settings(horizon))
    centre = np.asarray(sc.station_center)
    print(f"{'hour':>5} {'x km':>7} {'y km':>7} {'z km':>6} {'u m/s':>6} {'dist km':>8}")
    for k in range(0, len(log), 6):
        x = log.positions[k]
        print(f"{log.t_hours[k]:5.1f} {x[0]:7.1f} {x[1]:7.1f} {x[2]:6.2f} {log.u_z[k]:6.2f} "
              f"{np.linalg.norm(x[:2] - centre):8.1f}")
    print(episode_metrics(log).to_json(include_runtime=True))


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 3.0)
