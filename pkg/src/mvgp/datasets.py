"""Reading, writing and validating observation tables.

The CSV schema has one row per observation::

    species,site_id,s1,s2,y,z,<covariate columns...>

``s1, s2`` are projected coordinates, ``y`` the response and ``z`` the
number of trials (binomial) or sampling effort (count models).  Covariate
cells may be empty for species that do not use that covariate.
"""

from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
import pandas as pd

from .errors import DomainError, SchemaError
from .likelihoods import ObsModel, validate

REQUIRED = ("species", "site_id", "s1", "s2", "y", "z")


@dataclass
class Dataset:
    """Observations of several species.

    Attributes
    ----------
    species_names : list of str
        Names indexed by the integer codes in `species`.
    species : ndarray of int
    site_id : ndarray of str
    coords : ndarray, shape (n, 2)
    y, z : ndarray
    covariates : ndarray, shape (n, p)
        Raw covariate values, NaN where missing.
    covariate_names : list of str
    standardization : dict
        Covariate name -> (mean, sd) used to standardize continuous
        covariates; categorical covariates are absent.
    """

    species_names: list
    species: np.ndarray
    site_id: np.ndarray
    coords: np.ndarray
    y: np.ndarray
    z: np.ndarray
    covariates: np.ndarray
    covariate_names: list
    standardization: dict = field(default_factory=dict)

    def __post_init__(self):
        self.species = np.asarray(self.species, dtype=int)
        self.site_id = np.asarray(self.site_id).astype(str)
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(
            self.y.size, len(self.covariate_names))
        n = self.y.size
        if not (self.species.size == self.site_id.size == self.coords.shape[0] == self.z.size == n):
            raise SchemaError("dataset columns have different lengths")
        if self.covariates.shape[1] != len(self.covariate_names):
            raise SchemaError("covariate matrix does not match covariate names")

    def __len__(self):
        return self.y.size

    @property
    def J(self):
        return len(self.species_names)

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(self, species=self.species[idx], site_id=self.site_id[idx],
                       coords=self.coords[idx], y=self.y[idx], z=self.z[idx],
                       covariates=self.covariates[idx])

    def reorder_species(self, names):
        """Recode species to follow `names`; rows of other species are dropped."""
        lookup = {s: i for i, s in enumerate(names)}
        old = np.array([lookup.get(s, -1) for s in self.species_names], dtype=int)
        codes = old[self.species] if self.species.size else self.species
        keep = codes >= 0
        out = self.subset(np.flatnonzero(keep))
        out.species = codes[keep]
        out.species_names = list(names)
        return out

    def covariate(self, name):
        return self.covariates[:, self.covariate_names.index(name)]

    def standardized(self, name):
        """Covariate column with stored standardization applied (if any)."""
        x = self.covariate(name)
        if name in self.standardization:
            m, s = self.standardization[name]
            return (x - m) / s
        return x

    def with_standardization(self, categorical=()):
        """Compute standardization constants over unique sites.

        Raises
        ------
        SchemaError
            If a continuous covariate has zero variance.
        """
        consts = {}
        for k, name in enumerate(self.covariate_names):
            if name in categorical:
                continue
            x = self.covariates[:, k]
            ok = np.isfinite(x)
            if not ok.any():
                raise SchemaError(f"covariate {name!r} has no observed values")
            _, first = np.unique(self.site_id[ok], return_index=True)
            vals = x[ok][first]
            sd = float(np.std(vals))
            if vals.size < 2 or sd == 0.0:
                raise SchemaError(f"covariate {name!r} has zero variance and cannot be standardized")
            consts[name] = (float(np.mean(vals)), sd)
        return replace(self, standardization=consts)

    def validate(self, models):
        """Check observation invariants species by species.

        Parameters
        ----------
        models : dict
            Species name -> ObsModel.
        """
        for j, name in enumerate(self.species_names):
            idx = np.flatnonzero(self.species == j)
            if idx.size == 0 or name not in models:
                continue
            try:
                validate(models[name], self.y[idx], self.z[idx])
            except DomainError as exc:
                bad = _first_bad(models[name], self.y[idx], self.z[idx])
                raise DomainError(f"row {int(idx[bad]) + 2}: {exc}") from None


def _first_bad(model, y, z):
    for i in range(y.size):
        try:
            validate(model, y[i : i + 1], z[i : i + 1])
        except DomainError:
            return i
    return 0


def _models_from(config):
    if config is None:
        return {}
    return {s.name: s.obs_model() for s in config.species}


def load_dataset(path, config=None, categorical=None, standardize=True):
    """Read a dataset CSV.

    Parameters
    ----------
    path : str or path-like
    config : ModelConfig, optional
        When given, observations are validated against each species'
        observation model and categorical covariates are taken from the
        covariate kernels.
    categorical : sequence of str, optional
        Names of integer-coded categorical covariates (overrides `config`).
    standardize : bool
        Compute standardization constants for continuous covariates.

    Raises
    ------
    SchemaError
        Missing header columns or non-numeric entries (with row numbers).
    DomainError
        Observation invariant violations (with row numbers).
    """
    try:
        df = pd.read_csv(path, dtype={"species": str, "site_id": str})
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file, missing header {','.join(REQUIRED)}") from None
    missing = [c for c in REQUIRED if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing header column(s) {', '.join(missing)}")
    cov_names = [c for c in df.columns if c not in REQUIRED]
    num = {}
    for c in ("s1", "s2", "y", "z", *cov_names):
        col = pd.to_numeric(df[c], errors="coerce")
        bad = col.isna() & df[c].notna()
        if c in ("s1", "s2", "y", "z"):
            bad |= df[c].isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 2
            raise SchemaError(f"{path}: row {row}: column {c!r} must be numeric")
        num[c] = col.to_numpy(dtype=float)
    if df["species"].isna().any():
        row = int(np.flatnonzero(df["species"].isna().to_numpy())[0]) + 2
        raise SchemaError(f"{path}: row {row}: missing species")
    coords = np.column_stack([num["s1"], num["s2"]])
    if not np.all(np.isfinite(coords)):
        row = int(np.flatnonzero(~np.isfinite(coords).all(axis=1))[0]) + 2
        raise SchemaError(f"{path}: row {row}: coordinates must be finite")
    if config is not None:
        names = [s.name for s in config.species]
        unknown = sorted(set(df["species"]) - set(names))
        if unknown:
            raise SchemaError(f"{path}: species {unknown} not in the configuration")
    else:
        names = list(dict.fromkeys(df["species"]))
    lookup = {s: i for i, s in enumerate(names)}
    ds = Dataset(
        species_names=names,
        species=np.array([lookup[s] for s in df["species"]], dtype=int),
        site_id=df["site_id"].fillna("").to_numpy(),
        coords=coords,
        y=num["y"],
        z=num["z"],
        covariates=np.column_stack([num[c] for c in cov_names]) if cov_names else np.zeros((len(df), 0)),
        covariate_names=cov_names,
    )
    if categorical is None:
        categorical = [c.name for c in config.covariates if c.categorical] if config else []
    for c in categorical:
        if c in cov_names:
            x = ds.covariate(c)
            x = x[np.isfinite(x)]
            if np.any(x != np.round(x)):
                raise SchemaError(f"{path}: categorical covariate {c!r} must be integer coded")
    ds.validate(_models_from(config))
    if standardize:
        ds = ds.with_standardization(categorical)
    return ds


def write_dataset(ds, path):
    """Write a dataset in the CSV schema (raw, unstandardized values)."""
    df = pd.DataFrame({
        "species": [ds.species_names[j] for j in ds.species],
        "site_id": ds.site_id,
        "s1": ds.coords[:, 0],
        "s2": ds.coords[:, 1],
        "y": ds.y,
        "z": ds.z,
    })
    for k, name in enumerate(ds.covariate_names):
        df[name] = ds.covariates[:, k]
    df.to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# hare and lynx series
# ---------------------------------------------------------------------------

HARE_LYNX_YEARS = (1845, 1935)
HOLDOUT = {"hare": (1870, 1900), "lynx": (1850, 1870)}


def make_hare_lynx_surrogate(seed=1845):
    """Synthetic stand-in for the annual hare and lynx pelt counts.

    Log abundances follow a shared cycle of about 9.8 years with a slowly
    drifting phase; lynx trail hare by one year.  Each series gets its own
    AR(1) perturbation and counts (in thousands) are Poisson.

    Returns
    -------
    pandas.DataFrame in the dataset CSV schema with a ``year`` covariate.
    """
    rng = np.random.default_rng(seed)
    years = np.arange(HARE_LYNX_YEARS[0], HARE_LYNX_YEARS[1] + 1)
    t = years - years[0]
    phase = 2 * np.pi * t / 9.8 + 0.4 * np.sin(2 * np.pi * t / 47.0)
    lag = 2 * np.pi / 9.8

    def ar1(rho, sd):
        e = np.empty(t.size)
        e[0] = rng.normal(0, sd)
        for i in range(1, t.size):
            e[i] = rho * e[i - 1] + rng.normal(0, sd * np.sqrt(1 - rho**2))
        return e

    log_h = np.log(35.0) + 1.1 * np.sin(phase) + ar1(0.5, 0.2)
    log_l = np.log(18.0) + 1.0 * np.sin(phase - lag) + ar1(0.5, 0.2)
    rows = []
    for name, lf in (("hare", log_h), ("lynx", log_l)):
        y = rng.poisson(np.exp(lf))
        for yr, v in zip(years, y):
            rows.append((name, str(yr), float(yr), 0.0, int(v), 1.0, float(yr)))
    return pd.DataFrame(rows, columns=[*REQUIRED, "year"])


def load_hare_lynx(path=None):
    """Annual hare and lynx counts, 1845-1935, as a two-species dataset.

    Parameters
    ----------
    path : str, optional
        A CSV in the dataset schema with a ``year`` covariate, e.g. the
        historical series.  By default the bundled synthetic surrogate is
        used (see :func:`make_hare_lynx_surrogate`); the historical counts
        could not be bundled.

    Returns
    -------
    Dataset
        Species ``hare`` and ``lynx`` with ``year`` as the only covariate.
    """
    if path is None:
        ref = resources.files("mvgp") / "_data" / "hare_lynx.csv"
        with resources.as_file(ref) as p:
            return load_dataset(p)
    return load_dataset(path)


def hare_lynx_holdout_mask(ds):
    """Boolean mask of held-out observations (hare 1870-1900, lynx 1850-1870)."""
    year = ds.covariate("year")
    mask = np.zeros(len(ds), dtype=bool)
    for name, (lo, hi) in HOLDOUT.items():
        j = ds.species_names.index(name)
        mask |= (ds.species == j) & (year >= lo) & (year <= hi)
    return mask


# ---------------------------------------------------------------------------
# prediction grids
# ---------------------------------------------------------------------------


@dataclass
class RasterGrid:
    """Rectangular prediction grid.

    Attributes
    ----------
    cell_x, cell_y : ndarray
        Cell centre coordinates of the active cells.
    covariates : ndarray, shape (n_cells, p)
        Raw covariate values per cell.
    covariate_names : list of str
    cell_size : tuple of float
    """

    cell_x: np.ndarray
    cell_y: np.ndarray
    covariates: np.ndarray
    covariate_names: list
    cell_size: tuple = (1.0, 1.0)

    def __post_init__(self):
        self.cell_x = np.asarray(self.cell_x, dtype=float)
        self.cell_y = np.asarray(self.cell_y, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(
            self.cell_x.size, len(self.covariate_names))
        if np.isnan(self.covariates).any():
            row = int(np.flatnonzero(np.isnan(self.covariates).any(axis=1))[0])
            raise SchemaError(f"grid cell {row} has missing covariate values")

    def __len__(self):
        return self.cell_x.size

    @classmethod
    def regular(cls, x_range, y_range, nx, ny, covariate_fn=None, covariate_names=()):
        """Grid of nx * ny cell centres over a rectangle."""
        dx = (x_range[1] - x_range[0]) / nx
        dy = (y_range[1] - y_range[0]) / ny
        xs = x_range[0] + dx * (np.arange(nx) + 0.5)
        ys = y_range[0] + dy * (np.arange(ny) + 0.5)
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        X, Y = X.ravel(), Y.ravel()
        cov = covariate_fn(X, Y) if covariate_fn is not None else np.zeros((X.size, 0))
        return cls(X, Y, cov, list(covariate_names), (dx, dy))


def load_grid(path):
    """Read a grid CSV with columns cell_x, cell_y and covariate columns."""
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file, missing header cell_x,cell_y") from None
    for c in ("cell_x", "cell_y"):
        if c not in df.columns:
            raise SchemaError(f"{path}: missing header column {c!r}")
    names = [c for c in df.columns if c not in ("cell_x", "cell_y")]
    return RasterGrid(df["cell_x"].to_numpy(float), df["cell_y"].to_numpy(float),
                      df[names].to_numpy(float) if names else np.zeros((len(df), 0)), names)


def write_grid(grid, path):
    df = pd.DataFrame({"cell_x": grid.cell_x, "cell_y": grid.cell_y})
    for k, name in enumerate(grid.covariate_names):
        df[name] = grid.covariates[:, k]
    df.to_csv(path, index=False, float_format="%.17g")
