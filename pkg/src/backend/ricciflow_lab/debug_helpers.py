class StepLogger:
    def __init__(self, logger):
        self.logger = logger
        self.rejected = 0

    def on_step_accepted(self, state, dt):
        self.logger.debug(
            f"Step {state.step_count} accepted: t={state.time:.9g} dt={dt:.3e} "
            f"min R floor={state.min_R_history_floor:.9g}"
        )

    def on_step_rejected(self, state, dt, reason):
        self.rejected += 1
        self.logger.debug(f"Step at t={state.time:.9g} rejected with dt={dt:.3e}: {reason}")
