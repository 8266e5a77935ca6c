import logging
import os

import numpy as np
import pandas as pd

from sdeselect import __version__
from sdeselect.errors import StoreError
from sdeselect.models.process import CovariateSet, SamplePath

logger = logging.getLogger(__name__)


class ResultStore:
    """
    Single writer for every output file of a run. Each CSV starts with a
    comment line carrying tool version, seed and config digest; floats are
    written at full round-trip precision.
    """

    def __init__(self, directory='results', seed=0, digest=''):
        self.directory = directory
        self.seed = seed
        self.digest = digest
        self.init_store()

    def init_store(self):
        try:
            os.makedirs(self.directory, exist_ok=True)
        except OSError as exc:
            raise StoreError(f"cannot create output directory {self.directory}: {exc}") from exc

    @property
    def header(self):
        return f"# sdeselect {__version__} seed={self.seed} config={self.digest}"

    def path_for(self, name):
        return os.path.join(self.directory, name)

    def write_table(self, name, frame: pd.DataFrame):
        """Write a table under the header comment"""
        path = self.path_for(name)
        try:
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(self.header + "\n")
                frame.to_csv(f, index=False, lineterminator="\n")
        except OSError as exc:
            raise StoreError(f"cannot write {path}: {exc}") from exc
        logger.info("wrote %s (%d rows)", path, len(frame))
        return path

    def write_path(self, name, path: SamplePath):
        """Path CSV: t,x"""
        frame = pd.DataFrame({'t': path.grid.times, 'x': path.values})
        return self.write_table(name, frame)

    def write_covariates(self, name, covs: CovariateSet):
        """Covariate CSV: t,z1,...,zp"""
        frame = pd.DataFrame({'t': covs.grid.times})
        for l, row in enumerate(covs.series):
            frame[f'z{l + 1}'] = row
        return self.write_table(name, frame)

    def write_fits(self, name, fits):
        """One row per (label, FitResult)"""
        rows = []
        for label, fit in fits:
            row = {'family': label}
            for j, value in enumerate(np.asarray(fit.theta_hat)):
                row[f'theta{j + 1}'] = float(value)
            row.update({'neg_loglik': fit.neg_loglik, 'bic': fit.bic, 'k': fit.k,
                        'n_obs': fit.n_obs, 'seed': self.seed})
            rows.append(row)
        return self.write_table(name, pd.DataFrame(rows))
