import importlib.resources

import pytest

from ascf import FeatureManifest, load_dataset
from datagen import write_bcc_like_csv, write_heart_like_csv, write_wine_csv


def manifest_path(name: str):
    return importlib.resources.files("ascf") / "manifests" / name


def shipped_manifest(name: str) -> FeatureManifest:
    return FeatureManifest.from_json_file(manifest_path(name))


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("data")


@pytest.fixture(scope="session")
def wine_csv(data_dir):
    return write_wine_csv(data_dir / "wine.csv")


@pytest.fixture(scope="session")
def bcc_csv(data_dir):
    return write_bcc_like_csv(data_dir / "breast_cancer_coimbra.csv")


@pytest.fixture(scope="session")
def heart_csv(data_dir):
    return write_heart_like_csv(data_dir / "heart_disease.csv")


@pytest.fixture(scope="session")
def wine_dataset(wine_csv):
    return load_dataset(wine_csv, shipped_manifest("wine.json"))


@pytest.fixture(scope="session")
def bcc_dataset(bcc_csv):
    return load_dataset(bcc_csv, shipped_manifest("breast_cancer_coimbra.json"))


@pytest.fixture(scope="session")
def heart_dataset(heart_csv):
    return load_dataset(heart_csv, shipped_manifest("heart_disease.json"))
