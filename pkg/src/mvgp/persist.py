"""Model files: versioned JSON with base64-encoded arrays.

A model file stores the configuration, the training data (needed for
cross-covariances at prediction time), the standardization constants, the
fitted parameter vector and the latent mode with its site precisions, so
predictions never rerun the Newton iterations.
"""

import base64
import json

import numpy as np

from .config import ModelConfig
from .datasets import Dataset
from .errors import SchemaError
from .laplace import laplace_state_at

FORMAT = "mvgp-model"
VERSION = 1


def encode_array(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"dtype": "float64", "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d):
    if d.get("dtype") != "float64":
        raise SchemaError(f"unsupported array dtype {d.get('dtype')!r}")
    buf = base64.b64decode(d["data"])
    return np.frombuffer(buf, dtype=np.float64).reshape(d["shape"]).copy()


def model_to_dict(model):
    state = model._require_state()
    ds = model.data
    return {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "data": {
            "species_names": list(ds.species_names),
            "species": encode_array(ds.species),
            "site_id": [str(s) for s in ds.site_id],
            "coords": encode_array(ds.coords),
            "y": encode_array(ds.y),
            "z": encode_array(ds.z),
            "covariates": encode_array(ds.covariates),
            "covariate_names": list(ds.covariate_names),
            "standardization": {k: list(v) for k, v in ds.standardization.items()},
        },
        "params": {"keys": [list(k) for k in model.schema.keys], "x": encode_array(model.x)},
        "laplace": {"f_hat": encode_array(state.f_hat), "a": encode_array(state.a),
                    "W": encode_array(state.W), "log_q": state.log_q},
    }


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def model_from_dict(d):
    from .model import MVGP

    if d.get("format") != FORMAT:
        raise SchemaError("not a model file")
    if d.get("version") != VERSION:
        raise SchemaError(f"unsupported model file version {d.get('version')}")
    cfg = ModelConfig.from_dict(d["config"])
    dd = d["data"]
    ds = Dataset(dd["species_names"], decode_array(dd["species"]).astype(int),
                 np.array(dd["site_id"]), decode_array(dd["coords"]), decode_array(dd["y"]),
                 decode_array(dd["z"]), decode_array(dd["covariates"]), dd["covariate_names"],
                 {k: tuple(v) for k, v in dd["standardization"].items()})
    model = MVGP(cfg, ds, x=decode_array(d["params"]["x"]))
    keys = [tuple(k) for k in d["params"]["keys"]]
    if keys != [tuple(k) for k in model.schema.keys]:
        raise SchemaError("stored parameter schema does not match the configuration")
    lp = d["laplace"]
    coreg, models = model.params()
    C = model.prior_cov(coreg)
    model.state = laplace_state_at(C, model.likelihood(models), decode_array(lp["f_hat"]),
                                   decode_array(lp["a"]), decode_array(lp["W"]))
    return model


def load_model(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid model file ({exc})") from None
    return model_from_dict(d)
