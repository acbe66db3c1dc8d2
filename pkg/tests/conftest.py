import numpy as np
import pytest

import conformal_control as cc

DI_A = np.array([[1.0, 0.5], [0.0, 1.0]])
DI_B = np.array([[0.0], [0.5]])
K_DIRECT_REF = np.array([[-0.241, -0.787]])
K_LMI_REF = np.array([[-1.4140, -2.3412]])
PHI_REF = np.array([[3.4644, 3.8069], [3.8069, 5.6494]])
Y_REF = np.array([[12.6733, -1.0720], [-1.0720, 114.7949]])


@pytest.fixture
def di_system():
    return cc.LinearSystem(A=DI_A, B=DI_B, N=100)


@pytest.fixture
def di_constraints():
    return cc.ConstraintSpec.uniform(
        np.eye(2) / 10.0, np.zeros(2), np.array([[1.0]]), theta=0.05, N=100
    )


@pytest.fixture
def di_cost():
    return cc.CostSpec(
        state_weight=np.zeros((2, 2)),
        input_weight=np.array([[1.0]]),
        terminal_weight=100.0 * np.eye(2),
    )


@pytest.fixture
def di_generator():
    return cc.double_integrator_generator()
