"""Shared fixtures for the hrcenternet test suite."""

import logging

import numpy as np
import pytest
import torch

from hrcenternet.core.codec import CodecConfig
from hrcenternet.core.geometry import BBox
from hrcenternet.core.model import build_model
from hrcenternet.core.synth import SynthConfig, generate_page

from tests.helpers import TINY, TOY


@pytest.fixture(autouse=True)
def _isolated(monkeypatch, tmp_path):
    """No ./config.yaml leaks in and torch stays single-threaded per test"""
    monkeypatch.chdir(tmp_path)
    torch.set_num_threads(1)
    logging.getLogger("hrcenternet").handlers.clear()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def codec_cfg():
    return CodecConfig()


@pytest.fixture
def example_box():
    """The worked example: center (50.8, 20.4), 40 wide, 24 tall on a 128x128 page"""
    return BBox(50.8, 20.4, 40.0, 24.0)


@pytest.fixture
def toy_model():
    return build_model(TOY, seed=0)


@pytest.fixture
def tiny_model():
    return build_model(TINY, seed=0)


@pytest.fixture
def toy_page():
    return generate_page(SynthConfig(seed=3), image_name="p0.png")
