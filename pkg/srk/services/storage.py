import json
import logging
import os
import sys
import tempfile
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from srk.config.settings import config
from srk.core.driving import DrivingPath, DrivingSpec
from srk.core.errors import ValidationError
from srk.core.tableau import ButcherTableau, serialize
from srk.utils.helpers import json_safe

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class StorageService:
    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or config.OUTPUT_DIR

    def resolve(self, filename: str) -> str:
        """Относительные пути считаются от каталога результатов"""
        if os.path.isabs(filename):
            return filename
        return os.path.join(self.output_dir, filename)

    def write_text(self, text: str, out: Optional[str] = None) -> Optional[str]:
        """Пишет документ в stdout или атомарно в файл"""
        if out is None:
            sys.stdout.write(text)
            sys.stdout.flush()
            return None
        target = self.resolve(out)
        folder = os.path.dirname(os.path.abspath(target))
        os.makedirs(folder, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(prefix=".srk_", dir=folder)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp_path, target)
        except Exception as e:
            logger.error(f"Error writing {target}: {e}")
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        logger.info(f"Saved: {target}")
        return target

    @staticmethod
    def frame_to_csv(frame: pd.DataFrame) -> str:
        return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    @staticmethod
    def to_json(document: Dict[str, Any]) -> str:
        return json.dumps(json_safe(document), indent=2, sort_keys=True) + "\n"

    def save_document(self, frame: pd.DataFrame, document: Dict[str, Any], fmt: str,
                      out: Optional[str] = None) -> Optional[str]:
        """CSV из таблицы или JSON из полного документа"""
        if fmt == "csv":
            text = self.frame_to_csv(frame)
        elif fmt == "json":
            text = self.to_json(document)
        else:
            raise ValidationError(f"Unsupported format '{fmt}'")
        return self.write_text(text, out)

    def save_report(self, report, fmt: str, out: Optional[str] = None) -> Optional[str]:
        """Отчёт исследования (ConvergenceReport / DriftReport)"""
        return self.save_document(report.to_frame(), report.to_document(), fmt, out)

    def save_frame(self, frame: pd.DataFrame, out: Optional[str] = None) -> Optional[str]:
        return self.write_text(self.frame_to_csv(frame), out)

    def save_path(self, path: DrivingPath, filename: str) -> str:
        """Мелкие приращения Винера + заголовок (t0, T, levels, seed, lambda, sigma)"""
        target = self.resolve(filename)
        os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
        np.savez_compressed(
            target,
            dW_fine=path.dW_fine,
            t0=float(path.spec.t0),
            T=float(path.spec.T),
            levels=path.levels,
            seed=np.uint64(path.seed),
            lam=float(path.spec.lam),
            sigma=float(path.spec.sigma),
            base_cells=path.base_cells,
        )
        if not target.endswith(".npz"):
            target += ".npz"
        logger.info(f"Driving path saved: {target}")
        return target

    def load_path(self, filename: str) -> DrivingPath:
        target = self.resolve(filename)
        try:
            with np.load(target) as data:
                spec = DrivingSpec(lam=float(data["lam"]), sigma=float(data["sigma"]),
                                   t0=float(data["t0"]), T=float(data["T"]))
                dW = np.array(data["dW_fine"], dtype=np.float64)
                levels = int(data["levels"])
                base_cells = int(data["base_cells"])
                seed = int(data["seed"])
        except (OSError, KeyError, ValueError) as e:
            logger.error(f"Error loading driving path {target}: {e}")
            raise ValidationError(f"Cannot load driving path {target}: {e}") from e
        if dW.shape != (base_cells * 2 ** levels,):
            raise ValidationError(f"{target}: {dW.shape[0]} increments do not match levels={levels}")
        dW.setflags(write=False)
        logger.info(f"Driving path loaded from: {target}")
        return DrivingPath(spec=spec, levels=levels, seed=seed, dW_fine=dW, base_cells=base_cells)

    def save_tableau(self, tableau: ButcherTableau, filename: str) -> Optional[str]:
        return self.write_text(json.dumps(serialize(tableau), indent=2) + "\n", filename)
