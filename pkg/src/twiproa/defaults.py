"""Default numeric settings and where each one comes from."""
import numpy as np

TS = 0.01
#: RK4 substeps per sampling interval in the nonlinear simulation.
SUBSTEPS = 1
U_MAX = 2.2

LQR_Q = np.diag([
    10.0 * (1 / 0.1) ** 2,
    5.0 * (1 / 0.2) ** 2,
    50.0 * (180 / (10 * np.pi)) ** 2,
    0.1 * (180 / (90 * np.pi)) ** 2,
])
LQR_R = np.array([[250.0 * (1 / 2.5) ** 2]])

#: Symmetric state bounds ``|x_i| <= bound``; ``inf`` leaves a component free.
STATE_BOUNDS = (np.inf, 0.5, 0.75, 5.5)
HORIZON = 20
MPC_SLACK_WEIGHT = 1e5
CTMPC_SLACK_WEIGHT = 1e4
TUBE_ALPHA = 0.815
W_MAX = 0.075

LYAPUNOV_Q = np.eye(4)
GAMMA_MARGIN = 0.99
RHO_SAFETY = 0.99

MC_SAMPLES = 5000
MC_HORIZON = 20.0
MC_RANGES = {"xdot_w": (-1.0, 1.0), "theta": (-1.5, 1.5), "thetadot": (-1.5, 1.5)}

#: Published reference values used by the acceptance checks.
PUBLISHED_A = np.array([
    [1.0, 9.883e-3, -6.524e-5, 4.471e-6],
    [0.0, 9.768e-1, -1.276e-2, 8.620e-4],
    [0.0, 6.175e-3, 1.008e0, 9.780e-3],
    [0.0, 1.222e0, 1.573e0, 9.591e-1],
])
PUBLISHED_B = np.array([[6.272e-5], [1.240e-2], [-3.303e-3], [-6.533e-1]])
PUBLISHED_K_LQR = np.array([[-4.291, -8.142, -9.271, -0.574]])
PUBLISHED_STABLE_FRACTION = 0.5848

#: (setting, value, source) rows for the generated report.
PROVENANCE = [
    ("model parameters", "d, r, m_B, m_W, J, g, i_gb, K_m, R_M from the parameter table; "
     "l = 1.0e-2, I_2 = 2.175e-4 and the two-motor torque model reconciled against the "
     "published discrete matrices", "published model + discrete matrices"),
    ("Ts", "0.01 s", "sampling time of the published discrete model"),
    ("RK4 substeps", "1", "chosen: one RK4 step per sampling interval"),
    ("Q, R", "diag(10/0.1^2, 5/0.2^2, 50(18/pi)^2, 0.1(2/pi)^2), 250/2.5^2", "published LQR weights"),
    ("u_max", "2.2 V", "published actuator limit"),
    ("state bounds", "|xdot_w| <= 0.5, |theta| <= 0.75, |thetadot| <= 5.5", "published MPC state set"),
    ("N", "20", "published MPC horizon"),
    ("rho (MPC)", "1e5", "published MPC slack weight"),
    ("rho (CTMPC)", "1e4", "published CTMPC slack weight"),
    ("alpha", "0.815", "published tube contraction rate"),
    ("w_max", "0.075 V", "published input disturbance bound"),
    ("Lyapunov Q", "I_4", "published certification setup"),
    ("gamma margin", "0.99", "chosen: strict inequality margin"),
    ("rho safety", "0.99", "chosen: sampling safety factor"),
    ("MC samples", "5000", "published campaign size"),
    ("MC ranges", "xdot_w in [-1,1], theta in [-1.5,1.5], thetadot in [-1.5,1.5], x_w = 0",
     "published sampling box"),
    ("MC horizon", "20 s", "published simulation horizon"),
]
