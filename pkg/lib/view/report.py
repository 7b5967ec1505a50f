"""
Rendering evaluation results as JSON.

"""

import json


def render_json(data):
    "Stable JSON text of `data`"

    return json.dumps(data, indent=1, sort_keys=True) + "\n"


def render_eval(result, env, bundle_checksums=None):
    """
    Evaluation report: per-seed returns, mean and standard error,
    normalized score when reference returns are known.
    """

    data = result.to_dict()
    data["env"] = env.name
    if bundle_checksums:
        data["checksums"] = bundle_checksums
    return render_json(data)


def render_suite(rows):
    "Suite rows with their per-epoch frequency-shift ratios"

    data = []
    for row in rows:
        data.append(
            {
                "variant": row.name,
                "mean": row.mean,
                "stderr": row.stderr,
                "final_ratio": row.final_ratio,
                "dataset_sha256": row.dataset_checksum,
                "seeds": row.seeds,
                "model_ratios": row.log.model_ratios(),
                "baseline_ratios": row.log.baseline_ratios(),
            }
        )
    return render_json(data)
