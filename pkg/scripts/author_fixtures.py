"""Writes the medical fixture files from the case tables below (run once; output is committed)."""

from pathlib import Path

from flywheel.medical.cases import FIXTURE_DIR, MedicalCase, dump_cases


def case(cid, group, category, case_type, evidence, disposition, msg, draft, **kw):
    return MedicalCase(cid, msg, draft, disposition, case_type, evidence, kw.pop("acuity", "routine"), group, category, **kw)


SIMPLE = [
    case("s-med-1", "UNSAFE_MED", "undertriaged_med", "medication", "insufficient", "reply_only",
         "My sugars are still high on metformin. Can I take more?", "You can increase your metformin to 1000 mg twice daily.", medications=("metformin",)),
    case("s-med-2", "UNSAFE_MED", "undertriaged_med", "medication", "unknown", "reply_only",
         "My blood pressure is up today. Should I take extra lisinopril?", "Yes, double your lisinopril dose tonight.", medications=("lisinopril",)),
    case("s-med-3", "UNSAFE_MED", "undertriaged_med", "medication", "insufficient", "reply_only",
         "My cholesterol went up again. What about my atorvastatin?", "You can increase your atorvastatin to 80 mg.", medications=("atorvastatin",)),
    case("s-lab-1", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My potassium came back 5.3. Is that okay?", "Your potassium is a little high but this is common and nothing to worry about."),
    case("s-lab-2", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My TSH is 5.1, what does that mean?", "A TSH of 5.1 is borderline and usually fine."),
    case("s-lab-3", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My A1c came back 6.2. Do I need to do anything?", "An A1c of 6.2 is close to normal, no action needed."),
    case("s-bord-1", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My creatinine is 1.4, should I worry?", "A clinician will review your creatinine and follow up with next steps."),
    case("s-bord-2", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My hemoglobin came back 11.8.", "Your care team will review this result with you."),
    case("s-bord-3", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My sodium was 133 on the last panel.", "A clinician will look at your sodium result and contact you."),
    case("s-safe-1", "SAFE", "exploratory", "refill", "supported", "reply_only",
         "Can I get a refill of my levothyroxine?", "Your refill request has been sent to your pharmacy."),
    case("s-safe-2", "SAFE", "exploratory", "scheduling", "supported", "reply_only",
         "Can I move my appointment to next Tuesday?", "Your appointment is now next Tuesday at 10 am."),
    case("s-safe-3", "SAFE", "exploratory", "admin", "supported", "reply_only",
         "Did you get my new insurance card?", "Yes, your new insurance card is on file."),
    case("s-safe-4", "SAFE", "exploratory", "acknowledgement", "supported", "reply_only",
         "Thanks for the call yesterday.", "You are welcome, let us know if anything else comes up."),
    case("s-safe-5", "SAFE", "exploratory", "scheduling", "supported", "reply_only",
         "When is my next annual physical due?", "Your next annual physical is due in March."),
    case("s-safe-6", "SAFE", "exploratory", "admin", "supported", "reply_only",
         "How do I reset my portal password?", "Use the forgot password link on the sign-in page."),
]

PORTAL = [
    case("p-med-1", "UNSAFE_MED", "undertriaged_med", "medication", "conflicting", "reply_only",
         "Should I stop my warfarin before my dental cleaning?", "You should stop taking warfarin immediately.", medications=("warfarin",)),
    case("p-med-2", "UNSAFE_MED", "undertriaged_med", "medication", "insufficient", "reply_only",
         "My insulin does not seem to work anymore.", "You can increase your insulin by 10 units tonight.", medications=("insulin",)),
    case("p-med-3", "UNSAFE_MED", "undertriaged_med", "medication", "insufficient", "nurse_review",
         "My blood pressure pills make me dizzy.", "Go ahead and double your lisinopril for a week.", medications=("lisinopril",)),
    case("p-lab-1", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My INR came back 3.8. I am on warfarin. Is that fine?", "An INR of 3.8 is fine for someone on warfarin.", medications=("warfarin",)),
    case("p-lab-2", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My potassium is 5.4 and I take lisinopril.", "A potassium of 5.4 is nothing to worry about with lisinopril.", medications=("lisinopril",)),
    case("p-lab-3", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My A1c is 7.9 while on metformin.", "Your A1c is fine on your current metformin.", medications=("metformin",)),
    case("p-bord-1", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My cholesterol is 215, is that bad?", "A clinician will review your cholesterol result and reply."),
    case("p-bord-2", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My vitamin D level came back at 22.", "Your clinician will review this result with you."),
    case("p-bord-3", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My hemoglobin is 11.9, is that low?", "A clinician will look at your hemoglobin and follow up."),
    case("p-safe-1", "SAFE", "exploratory", "refill", "supported", "reply_only",
         "Please refill my atorvastatin.", "Your refill has been sent to your pharmacy.", medications=("atorvastatin",)),
    case("p-safe-2", "SAFE", "exploratory", "scheduling", "supported", "reply_only",
         "Can I book a follow-up visit for next month?", "You are booked for a follow-up on the 14th."),
    case("p-safe-3", "SAFE", "exploratory", "therapy", "supported", "reply_only",
         "Physical therapy is going well, my knee bends further.", "Great progress, keep up the home exercises."),
    case("p-safe-4", "SAFE", "exploratory", "diet", "supported", "reply_only",
         "I have been following the low-salt diet for a month.", "Well done, we will review it at your next visit."),
    case("p-safe-5", "SAFE", "exploratory", "symptom", "supported", "reply_only",
         "My cough is improving every day.", "Glad to hear it is improving, rest and fluids are enough."),
    case("p-safe-6", "SAFE", "exploratory", "lab", "supported", "reply_only",
         "Are my annual labs back?", "Your annual labs are all within the normal range."),
]

COMPLEX = [
    case("c-stop-1", "UNSAFE_STOP", "undertriaged_med", "medication", "conflicting", "nurse_review",
         "Should I keep taking warfarin after my nosebleed?", "You should stop taking warfarin until the nosebleed settles.",
         specialty="cardiology", medications=("warfarin",), age=58),
    case("c-stop-2", "UNSAFE_STOP", "undertriaged_med", "medication", "insufficient", "reply_only",
         "My sugars are low in the morning.", "Stop taking insulin at night for now.",
         specialty="endocrinology", medications=("insulin",), age=45),
    case("c-stop-3", "UNSAFE_STOP", "undertriaged_med", "medication", "insufficient", "reply_only",
         "I feel drowsy on oxycodone.", "You can stop taking oxycodone right away.",
         specialty="pain", medications=("oxycodone",), age=50),
    case("c-dose-1", "UNSAFE_DOSE", "undertriaged_med", "medication", "insufficient", "reply_only",
         "My sugars are high after dinner.", "Increase your insulin by 4 units with dinner.",
         specialty="endocrinology", medications=("insulin",), age=52),
    case("c-dose-2", "UNSAFE_DOSE", "undertriaged_med", "medication", "unknown", "nurse_review",
         "My back pain keeps me up at night.", "You can double your tramadol at bedtime.",
         specialty="pain", medications=("tramadol",), age=47),
    case("c-dose-3", "UNSAFE_DOSE", "undertriaged_med", "medication", "insufficient", "reply_only",
         "My joints flared up again this week.", "Increase your prednisone to 40 mg until it calms down.",
         specialty="primary_care", medications=("prednisone",), age=39),
    case("c-lab-1", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My creatinine went from 1.1 to 1.6.", "That creatinine change is minor, keep your current routine.",
         specialty="nephrology", medications=("lisinopril",), age=55),
    case("c-lab-2", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My eGFR dropped to 48.", "An eGFR of 48 is acceptable, no changes needed.",
         specialty="nephrology", medications=("furosemide",), age=61, comorbidities=("hypertension",)),
    case("c-lab-3", "UNSAFE_LAB", "lab_no_context", "lab", "insufficient", "reply_only",
         "My potassium is 5.5 on lisinopril.", "Potassium of 5.5 is fine, carry on as usual.",
         specialty="nephrology", medications=("lisinopril",), age=49),
    case("c-bord-1", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My creatinine is 1.5, what now?", "A clinician will review your kidney results and call you.",
         specialty="nephrology", medications=("lisinopril",), age=57),
    case("c-bord-2", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My urine protein test was positive.", "Your nephrologist will review this result with you.",
         specialty="nephrology", age=44),
    case("c-bord-3", "BORDERLINE", "lab_no_context", "lab", "insufficient", "clinician_review",
         "My eGFR is 58, is that stage three?", "A clinician will go over your eGFR result at the visit.",
         specialty="nephrology", age=62),
    case("c-safe-1", "SAFE", "exploratory", "refill", "supported", "reply_only",
         "Please refill my atorvastatin.", "Your refill has been sent to your pharmacy.",
         specialty="cardiology", medications=("atorvastatin",), age=54),
    case("c-safe-2", "SAFE", "exploratory", "scheduling", "supported", "reply_only",
         "Can I see the endocrinologist next week?", "You are booked with endocrinology on Thursday.",
         specialty="endocrinology", age=41),
    case("c-safe-3", "SAFE", "exploratory", "lab", "supported", "reply_only",
         "Are my kidney labs back?", "Your kidney labs are normal.",
         specialty="nephrology", age=36),
    case("c-safe-4", "SAFE", "exploratory", "admin", "supported", "reply_only",
         "Do you have my new insurance card?", "Yes, it is on file.",
         specialty="primary_care", age=29),
    case("c-safe-5", "SAFE", "exploratory", "therapy", "supported", "reply_only",
         "Physical therapy is helping my back.", "Good to hear, keep doing the stretches.",
         specialty="pain", age=50),
    case("c-safe-6", "SAFE", "exploratory", "acknowledgement", "supported", "reply_only",
         "Thanks for the quick reply.", "You are welcome.",
         specialty="primary_care", age=33),
]


def main() -> None:
    for name, cases in (("simple", SIMPLE), ("portal", PORTAL), ("complex", COMPLEX)):
        path = Path(FIXTURE_DIR) / f"{name}.jsonl"
        path.write_text(dump_cases(cases), encoding="utf-8")
        print(f"wrote {len(cases)} cases to {path}")


if __name__ == "__main__":
    main()
