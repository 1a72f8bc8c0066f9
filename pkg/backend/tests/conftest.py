# tests/conftest.py

import os

# banco em memória antes de qualquer import de app.*
os.environ.setdefault("DATABASE_URL", "sqlite://")

import numpy as np
import pytest
from fastapi.testclient import TestClient
from sqlalchemy.pool import StaticPool
from sqlmodel import Session, SQLModel, create_engine

from app.database import get_session
from app.main import app
from app.models import DeviceConfig


@pytest.fixture
def device() -> DeviceConfig:
    return DeviceConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(name="session")
def session_fixture():
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    SQLModel.metadata.create_all(engine)
    with Session(engine) as session:
        yield session


@pytest.fixture(name="client")
def client_fixture(session: Session):
    def get_session_override():
        return session

    app.dependency_overrides[get_session] = get_session_override
    with TestClient(app) as client:
        yield client
    app.dependency_overrides.clear()
