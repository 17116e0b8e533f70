"""Print state, action and parameter dimensions for every bundled actuation model."""
from actlab.actuation import pack_params
from actlab.env import bundled_env


def main():
    print(f"{'kind':6} {'state':>5} {'action':>6} {'params':>6}")
    for kind in ("tor", "vel", "pd", "mtu"):
        env = bundled_env(kind)
        print(f"{kind:6} {env.state_dim:5d} {env.action_dim:6d} {len(pack_params(env.actuation)):6d}")


if __name__ == "__main__":
    main()
