from sklearn.ensemble import (
    RandomForestClassifier,
    ExtraTreesClassifier as ETC,
)
from scipy import *
from . import helpers
from .models import fit_model
from ..shared.io import load as load_table

clf = RandomForestClassifier(n_estimators=10)
fit_model(clf, load_table("occ.csv"))
